//! TOML config files: link description, optimizer and sweep settings,
//! training hyper-parameters and device parameters.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wdm_cascade::cascade::{EdfaStage, LinkConfig, LinkElement};
use wdm_cascade::edfa::{EdfaMlp, VirtualEdfaDevice};
use wdm_cascade::fiber::{FiberModelKind, FiberSpan, RamanGainModel};
use wdm_cascade::grid::{FrequencyGrid, PowerProfile};
use wdm_cascade::optimize::{CostKind, OptimizationConfig};

use crate::CliError;

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {}", path.display(), e.message())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberDefaults {
    pub alpha_db_per_km: f64,
    pub aeff_um2: f64,
    pub step_m: f64,
}

impl Default for FiberDefaults {
    fn default() -> Self {
        Self {
            alpha_db_per_km: 0.2,
            aeff_um2: 80.0,
            step_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberElement {
    pub length_km: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_db_per_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aeff_um2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_m: Option<f64>,
    /// Pins this span to one fiber model regardless of `--model`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<FiberModelKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdfaElement {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Trained surrogate file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Virtual device used as ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementSpec {
    Fiber(FiberElement),
    Edfa(EdfaElement),
}

/// Link config file. Relative paths are taken from the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFile {
    pub p_launch_dbm: f64,
    #[serde(default = "default_kind")]
    pub fiber_model: FiberModelKind,
    #[serde(default = "default_leff")]
    pub leff_alpha_factor: f64,
    #[serde(default)]
    pub fiber: FiberDefaults,
    #[serde(default)]
    pub raman: RamanGainModel,
    pub elements: Vec<ElementSpec>,
}

fn default_kind() -> FiberModelKind {
    FiberModelKind::Srs
}

fn default_leff() -> f64 {
    2.0
}

impl LinkFile {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let file: Self = read_toml(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((file, base))
    }

    /// Copy with every optional fiber field filled in.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.elements {
            if let ElementSpec::Fiber(f) = e {
                f.alpha_db_per_km.get_or_insert(self.fiber.alpha_db_per_km);
                f.aeff_um2.get_or_insert(self.fiber.aeff_um2);
                f.step_m.get_or_insert(self.fiber.step_m);
            }
        }
        out
    }

    /// Builds the link, loading every referenced model and device once.
    pub fn build(&self, base: &Path) -> Result<LinkConfig, CliError> {
        let mut models: HashMap<PathBuf, Arc<EdfaMlp>> = HashMap::new();
        let mut elements = Vec::with_capacity(self.elements.len());
        let mut n_edfa = 0;
        for (i, e) in self.elements.iter().enumerate() {
            match e {
                ElementSpec::Fiber(f) => {
                    let span = FiberSpan {
                        length_km: f.length_km,
                        alpha_db_per_km: f.alpha_db_per_km.unwrap_or(self.fiber.alpha_db_per_km),
                        a_eff_m2: f.aeff_um2.unwrap_or(self.fiber.aeff_um2) * 1e-12,
                        step_m: f.step_m.unwrap_or(self.fiber.step_m),
                        leff_alpha_factor: self.leff_alpha_factor,
                    };
                    span.validate()
                        .map_err(|err| CliError::Input(format!("element {}: {err}", i + 1)))?;
                    elements.push(LinkElement::Fiber { span, kind: f.model });
                }
                ElementSpec::Edfa(a) => {
                    n_edfa += 1;
                    let name = a.name.clone().unwrap_or_else(|| format!("A{n_edfa}"));
                    let mut stage = EdfaStage::new(name.clone());
                    if let Some(m) = &a.model {
                        let path = resolve(base, m);
                        let model = match models.get(&path) {
                            Some(m) => m.clone(),
                            None => {
                                let m = Arc::new(EdfaMlp::load(&path).map_err(|err| {
                                    CliError::Input(format!("EDFA {name}: cannot load model: {err}"))
                                })?);
                                models.insert(path, m.clone());
                                m
                            }
                        };
                        stage = stage.with_model(model);
                    }
                    if let Some(d) = &a.device {
                        let device = VirtualEdfaDevice::load(&resolve(base, d))
                            .map_err(|err| CliError::Input(format!("EDFA {name}: cannot load device: {err}")))?;
                        stage = stage.with_device(device);
                    }
                    elements.push(LinkElement::Edfa(stage));
                }
            }
        }
        let mut link = LinkConfig::new(elements, self.p_launch_dbm)
            .with_fiber_kind(self.fiber_model)
            .with_raman(self.raman);
        link.grid = FrequencyGrid::c_band();
        link.validate()?;
        Ok(link)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeFile {
    pub cost: CostKind,
    /// Target profile CSV for the target-mse cost.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_profile: Option<PathBuf>,
    pub max_iters: usize,
    pub step_size_db: f64,
    pub stall_tol: f64,
    pub stall_window: usize,
    pub excursion_bound: f64,
    pub restarts: usize,
    pub seed: u64,
    pub gradient_smoothing: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub softmin_tau: Option<f64>,
}

impl Default for OptimizeFile {
    fn default() -> Self {
        let d = OptimizationConfig::default();
        Self {
            cost: d.cost,
            target_profile: None,
            max_iters: d.max_iters,
            step_size_db: d.step_size_db,
            stall_tol: d.stall_tol,
            stall_window: d.stall_window,
            excursion_bound: d.excursion_bound,
            restarts: d.restarts,
            seed: d.seed,
            gradient_smoothing: d.gradient_smoothing,
            softmin_tau: d.softmin_tau,
        }
    }
}

impl OptimizeFile {
    pub fn load_or_default(path: Option<&Path>) -> Result<(Self, PathBuf), CliError> {
        match path {
            Some(p) => Ok((read_toml(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default())),
            None => Ok((Self::default(), PathBuf::new())),
        }
    }

    pub fn to_config(&self, base: &Path) -> Result<OptimizationConfig, CliError> {
        let target = self
            .target_profile
            .as_ref()
            .map(|p| PowerProfile::load_csv(&resolve(base, p), FrequencyGrid::c_band()))
            .transpose()?;
        let cfg = OptimizationConfig {
            cost: self.cost,
            target,
            max_iters: self.max_iters,
            step_size_db: self.step_size_db,
            stall_tol: self.stall_tol,
            stall_window: self.stall_window,
            excursion_bound: self.excursion_bound,
            restarts: self.restarts,
            seed: self.seed,
            gradient_smoothing: self.gradient_smoothing,
            softmin_tau: self.softmin_tau,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a TOML file into `T`, or returns `T::default()` without a path.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    path.map(read_toml).transpose().map(Option::unwrap_or_default)
}
