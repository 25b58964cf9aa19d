//! Validation against the virtual ground truth: prediction error versus
//! launch power and per channel, and the response to reference launch
//! profiles.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{predict_output, predict_output_ground_truth, LinkConfig};
use crate::edfa::PROFILE_EXCURSION_RANGE;
use crate::error::{Error, Result};
use crate::fiber::FiberModelKind;
use crate::grid::{slope_db_per_thz, PowerProfile};
use crate::optimize::{optimize_baselines, Baselines, OptimizationConfig};
use crate::profiles::{derive_seed, generate_batch, GeneratedProfile};

pub const DEFAULT_SWEEP_POWERS: [f64; 10] = [12.0, 13.0, 14.0, 15.0, 16.0, 17.0, 18.0, 19.0, 20.0, 21.0];

/// Mean over channels of the squared dB difference.
pub fn mse_db2(predicted: &PowerProfile, measured: &PowerProfile) -> Result<f64> {
    if predicted.grid() != measured.grid() {
        return Err(Error::invalid("profiles are defined on different grids"));
    }
    let (p, m) = (predicted.to_dbm()?, measured.to_dbm()?);
    let n = p.values().len() as f64;
    Ok(p.values().iter().zip(m.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub powers_dbm: Vec<f64>,
    pub n_profiles: usize,
    pub seed: u64,
    /// Launch power for the per-channel report.
    pub channel_power_dbm: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            powers_dbm: DEFAULT_SWEEP_POWERS.to_vec(),
            n_profiles: 200,
            seed: 0,
            channel_power_dbm: 18.0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.powers_dbm.is_empty() {
            return Err(Error::Config("`powers_dbm` must not be empty".into()));
        }
        if let Some(p) = self.powers_dbm.iter().chain([&self.channel_power_dbm]).find(|p| !p.is_finite()) {
            return Err(Error::Config(format!("launch power {p} is not finite")));
        }
        if self.n_profiles == 0 {
            return Err(Error::Config("`n_profiles` must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p_launch_dbm: f64,
    pub model_kind: FiberModelKind,
    pub mean_mse_db2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub link_id: String,
    pub n_profiles: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn mean_mse(&self, p_launch_dbm: f64, kind: FiberModelKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.p_launch_dbm == p_launch_dbm && r.model_kind == kind)
            .map(|r| r.mean_mse_db2)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["p_launch_dbm", "model_kind", "mean_mse_db2"]).map_err(csv_err)?;
        for r in &self.rows {
            csv.write_record([r.p_launch_dbm.to_string(), r.model_kind.to_string(), r.mean_mse_db2.to_string()])
                .map_err(csv_err)?;
        }
        csv.flush().map_err(|e| Error::io("<report>", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMseReport {
    pub link_id: String,
    pub p_launch_dbm: f64,
    pub model_kind: FiberModelKind,
    pub n_profiles: usize,
    pub seed: u64,
    pub frequencies_thz: Vec<f64>,
    pub mse_db2: Vec<f64>,
}

impl ChannelMseReport {
    pub fn mean(&self) -> f64 {
        self.mse_db2.iter().sum::<f64>() / self.mse_db2.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["channel", "freq_thz", "mse_db2"]).map_err(csv_err)?;
        for (k, (f, m)) in self.frequencies_thz.iter().zip(&self.mse_db2).enumerate() {
            csv.write_record([k.to_string(), f.to_string(), m.to_string()]).map_err(csv_err)?;
        }
        csv.flush().map_err(|e| Error::io("<report>", e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("writing report: {e}"))
}

/// Runs `f` on a pool with `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(0) => Err(Error::Config("`workers` must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn evaluation_batch(n: usize, seed: u64) -> Result<Vec<GeneratedProfile>> {
    generate_batch(n, PROFILE_EXCURSION_RANGE, seed)
}

/// Per-channel squared errors of one profile, for each requested model kind.
fn profile_errors(
    link: &LinkConfig,
    truth_link: &LinkConfig,
    g: &GeneratedProfile,
    kinds: &[FiberModelKind],
) -> Result<Vec<Vec<f64>>> {
    let truth = predict_output_ground_truth(truth_link, &g.profile, Some(derive_seed(g.seed, 2)))?;
    kinds
        .iter()
        .map(|&k| {
            let pred = predict_output(&link.with_fiber_kind(k), &g.profile)?;
            Ok(pred.values().iter().zip(truth.values()).map(|(a, b)| (a - b).powi(2)).collect())
        })
        .collect()
}

/// Mean MSE between surrogate predictions and the SRS ground truth for each
/// launch power and fiber model. One profile batch is reused at every power.
pub fn run_power_sweep(link: &LinkConfig, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    link.validate()?;
    let batch = evaluation_batch(cfg.n_profiles, cfg.seed)?;
    let kinds = [FiberModelKind::Bulk, FiberModelKind::Srs];
    let mut rows = Vec::new();
    for &p in &cfg.powers_dbm {
        let at_power = link.with_launch(p);
        let truth_link = at_power.with_fiber_kind(FiberModelKind::Srs);
        let errors: Vec<Vec<Vec<f64>>> = batch
            .par_iter()
            .map(|g| profile_errors(&at_power, &truth_link, g, &kinds))
            .collect::<Result<_>>()?;
        for (ki, &kind) in kinds.iter().enumerate() {
            let total: f64 = errors
                .iter()
                .map(|e| e[ki].iter().sum::<f64>() / e[ki].len() as f64)
                .sum();
            rows.push(SweepRow {
                p_launch_dbm: p,
                model_kind: kind,
                mean_mse_db2: total / batch.len() as f64,
            });
        }
    }
    Ok(SweepReport {
        link_id: link.describe(),
        n_profiles: cfg.n_profiles,
        seed: cfg.seed,
        rows,
    })
}

/// Squared error per channel averaged over a profile batch.
pub fn run_channel_mse(
    link: &LinkConfig,
    p_launch_dbm: f64,
    kind: FiberModelKind,
    n_profiles: usize,
    seed: u64,
) -> Result<ChannelMseReport> {
    if n_profiles == 0 {
        return Err(Error::Config("`n_profiles` must be at least 1".into()));
    }
    link.validate()?;
    let at_power = link.with_launch(p_launch_dbm);
    let truth_link = at_power.with_fiber_kind(FiberModelKind::Srs);
    let batch = evaluation_batch(n_profiles, seed)?;
    let errors: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|g| profile_errors(&at_power, &truth_link, g, &[kind]).map(|mut e| e.remove(0)))
        .collect::<Result<_>>()?;
    let mut mse = vec![0.0; link.grid.n_channels()];
    for e in &errors {
        for (m, v) in mse.iter_mut().zip(e) {
            *m += v;
        }
    }
    mse.iter_mut().for_each(|m| *m /= n_profiles as f64);
    Ok(ChannelMseReport {
        link_id: link.describe(),
        p_launch_dbm,
        model_kind: kind,
        n_profiles,
        seed,
        frequencies_thz: link.grid.frequencies(),
        mse_db2: mse,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub name: &'static str,
    pub input: PowerProfile,
    /// Ground-truth output for `input`.
    pub output: PowerProfile,
    pub excursion_db: f64,
    pub slope_db_per_thz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub p_launch_dbm: f64,
    pub rows: Vec<BaselineRow>,
}

impl BaselineReport {
    pub fn get(&self, name: &str) -> Option<&BaselineRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["baseline", "excursion_db"]).map_err(csv_err)?;
        for r in &self.rows {
            csv.write_record([r.name.to_string(), r.excursion_db.to_string()]).map_err(csv_err)?;
        }
        csv.flush().map_err(|e| Error::io("<report>", e))
    }

    /// Writes `baselines.csv` plus `baseline_<name>_{input,output}.csv`;
    /// returns the written paths.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let path = dir.join("baselines.csv");
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let mut written = vec![path];
        for r in &self.rows {
            for (suffix, p) in [("input", &r.input), ("output", &r.output)] {
                let path = dir.join(format!("baseline_{}_{suffix}.csv", r.name));
                p.save_csv(&path)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// Ground-truth response to the four reference launch profiles.
pub fn run_baseline_comparison(
    link_srs: &LinkConfig,
    link_bulk: &LinkConfig,
    p_launch_dbm: f64,
    cfg: &OptimizationConfig,
    noise_seed: u64,
) -> Result<BaselineReport> {
    let (srs, bulk) = (link_srs.with_launch(p_launch_dbm), link_bulk.with_launch(p_launch_dbm));
    let baselines: Baselines = optimize_baselines(&srs, &bulk, cfg)?;
    let truth_link = srs.with_fiber_kind(FiberModelKind::Srs);
    let rows = baselines
        .named()
        .into_iter()
        .map(|(name, input)| {
            let output = predict_output_ground_truth(&truth_link, input, Some(noise_seed))?;
            Ok(BaselineRow {
                name,
                input: input.clone(),
                excursion_db: output.excursion_db()?,
                slope_db_per_thz: slope_db_per_thz(&output)?,
                output,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BaselineReport { p_launch_dbm, rows })
}
