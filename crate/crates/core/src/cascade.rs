//! End-to-end link: launch scaling followed by an ordered list of fiber
//! spans and constant-output-power amplifiers.

use std::f64::consts::LN_10;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::edfa::{apply_edfa, apply_edfa_tape, apply_virtual_edfa, EdfaMlp, VirtualEdfaDevice};
use crate::error::{Error, Result};
use crate::fiber::{FiberModelKind, FiberSpan, RamanGainModel, SrsPropagator};
use crate::grid::{dbm_to_log_watts, log_watts_to_dbm, total_power_dbm_var, FrequencyGrid, PowerProfile};
use crate::profiles::derive_seed;

/// An amplifier slot. Prediction needs `model`, the ground-truth oracle
/// needs `device`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfaStage {
    pub name: String,
    pub model: Option<Arc<EdfaMlp>>,
    pub device: Option<VirtualEdfaDevice>,
}

impl EdfaStage {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            model: None,
            device: None,
        }
    }

    pub fn with_model(mut self, model: Arc<EdfaMlp>) -> Self {
        self.model = Some(model);
        self
    }

    pub fn with_device(mut self, device: VirtualEdfaDevice) -> Self {
        self.device = Some(device);
        self
    }

    fn model(&self) -> Result<&EdfaMlp> {
        self.model
            .as_deref()
            .ok_or_else(|| Error::Config(format!("EDFA `{}` has no trained model", self.name)))
    }

    fn device(&self) -> Result<&VirtualEdfaDevice> {
        self.device
            .as_ref()
            .ok_or_else(|| Error::Config(format!("EDFA `{}` has no virtual device", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkElement {
    /// `kind: None` follows the link-wide fiber model.
    Fiber { span: FiberSpan, kind: Option<FiberModelKind> },
    Edfa(EdfaStage),
}

impl LinkElement {
    pub fn fiber(length_km: f64) -> Result<Self> {
        Ok(LinkElement::Fiber {
            span: FiberSpan::new(length_km)?,
            kind: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub elements: Vec<LinkElement>,
    pub p_launch_dbm: f64,
    pub grid: FrequencyGrid,
    pub raman: RamanGainModel,
    pub fiber_kind: FiberModelKind,
}

impl LinkConfig {
    pub fn new(elements: Vec<LinkElement>, p_launch_dbm: f64) -> Self {
        Self {
            elements,
            p_launch_dbm,
            grid: FrequencyGrid::c_band(),
            raman: RamanGainModel::default(),
            fiber_kind: FiberModelKind::Srs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements.is_empty() {
            return Err(Error::Config("link has no elements".into()));
        }
        if !self.p_launch_dbm.is_finite() {
            return Err(Error::Config(format!("launch power must be finite, got {}", self.p_launch_dbm)));
        }
        self.raman.validate()?;
        for e in &self.elements {
            if let LinkElement::Fiber { span, .. } = e {
                span.validate()?;
            }
        }
        Ok(())
    }

    pub fn with_fiber_kind(&self, kind: FiberModelKind) -> Self {
        Self {
            fiber_kind: kind,
            ..self.clone()
        }
    }

    pub fn with_launch(&self, p_launch_dbm: f64) -> Self {
        Self {
            p_launch_dbm,
            ..self.clone()
        }
    }

    pub fn with_raman(&self, raman: RamanGainModel) -> Self {
        Self {
            raman,
            ..self.clone()
        }
    }

    pub fn with_leff_alpha_factor(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.elements {
            if let LinkElement::Fiber { span, .. } = e {
                span.leff_alpha_factor = factor;
            }
        }
        out
    }

    /// Replaces every amplifier's surrogate.
    pub fn with_model(&self, model: Arc<EdfaMlp>) -> Self {
        let mut out = self.clone();
        for e in &mut out.elements {
            if let LinkElement::Edfa(stage) = e {
                stage.model = Some(Arc::clone(&model));
            }
        }
        out
    }

    pub fn fiber_kind_of(&self, kind: Option<FiberModelKind>) -> FiberModelKind {
        kind.unwrap_or(self.fiber_kind)
    }

    /// Same element sequence, spans and amplifier names; the link-wide
    /// fiber model may differ.
    pub fn same_topology(&self, other: &LinkConfig) -> bool {
        self.elements.len() == other.elements.len()
            && self.p_launch_dbm == other.p_launch_dbm
            && self.grid == other.grid
            && self.elements.iter().zip(&other.elements).all(|pair| match pair {
                (LinkElement::Fiber { span: a, kind: ka }, LinkElement::Fiber { span: b, kind: kb }) => {
                    a == b && ka == kb
                }
                (LinkElement::Edfa(a), LinkElement::Edfa(b)) => a.name == b.name,
                _ => false,
            })
    }

    pub fn describe(&self) -> String {
        self.elements
            .iter()
            .map(|e| match e {
                LinkElement::Fiber { span, .. } => format!("{}km", span.length_km),
                LinkElement::Edfa(s) => s.name.clone(),
            })
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Launch attenuation followed by `edfa, fiber` pairs.
///
/// The first element is a frequency-flat loss equal to the first fiber's
/// loss, so the first amplifier sees `P_launch − L·α` of total input.
pub fn amplified_link(stages: Vec<EdfaStage>, spans_km: &[f64], p_launch_dbm: f64) -> Result<LinkConfig> {
    if stages.len() != spans_km.len() || stages.is_empty() {
        return Err(Error::invalid("need one span per amplifier"));
    }
    let mut elements = vec![LinkElement::Fiber {
        span: FiberSpan::new(spans_km[0])?,
        kind: Some(FiberModelKind::Bulk),
    }];
    for (stage, &len) in stages.into_iter().zip(spans_km) {
        elements.push(LinkElement::Edfa(stage));
        elements.push(LinkElement::fiber(len)?);
    }
    Ok(LinkConfig::new(elements, p_launch_dbm))
}

/// `A2-90km-A3-70km`.
pub fn two_span_link(a2: EdfaStage, a3: EdfaStage, p_launch_dbm: f64) -> Result<LinkConfig> {
    amplified_link(vec![a2, a3], &[90.0, 70.0], p_launch_dbm)
}

/// `A1-90km-A2-80km-A3-70km`.
pub fn three_span_link(a1: EdfaStage, a2: EdfaStage, a3: EdfaStage, p_launch_dbm: f64) -> Result<LinkConfig> {
    amplified_link(vec![a1, a2, a3], &[90.0, 80.0, 70.0], p_launch_dbm)
}

fn fiber_values(link: &LinkConfig, span: &FiberSpan, kind: Option<FiberModelKind>, dbm: &[f64]) -> Result<Vec<f64>> {
    Ok(match link.fiber_kind_of(kind) {
        FiberModelKind::Bulk => {
            let loss = span.loss_db();
            dbm.iter().map(|v| v - loss).collect()
        }
        FiberModelKind::Srs => {
            let prop = SrsPropagator::new(&link.grid, span, &link.raman)?;
            let lw: Vec<f64> = dbm.iter().map(|&v| dbm_to_log_watts(v)).collect();
            prop.propagate_log_watts(&lw).into_iter().map(log_watts_to_dbm).collect()
        }
    })
}

fn run(link: &LinkConfig, input: &PowerProfile, noise_seed: Option<u64>, truth: bool) -> Result<Vec<PowerProfile>> {
    link.validate()?;
    if input.grid() != &link.grid {
        return Err(Error::invalid("input profile grid does not match the link grid"));
    }
    let mut p = input.to_dbm()?.with_total_dbm(link.p_launch_dbm)?;
    let mut stages = vec![p.clone()];
    for (i, e) in link.elements.iter().enumerate() {
        p = match e {
            LinkElement::Fiber { span, kind } => PowerProfile::from_dbm(fiber_values(link, span, *kind, p.values())?)?,
            LinkElement::Edfa(stage) if truth => {
                let mut rng = noise_seed.map(|s| ChaCha8Rng::seed_from_u64(derive_seed(s, i as u64)));
                apply_virtual_edfa(&p, stage.device()?, link.p_launch_dbm, rng.as_mut())?
            }
            LinkElement::Edfa(stage) => apply_edfa(&p, stage.model()?, link.p_launch_dbm)?,
        };
        if !p.values().iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite power after element {i}")));
        }
        stages.push(p.clone());
    }
    Ok(stages)
}

/// Surrogate prediction of the link output in dBm.
pub fn predict_output(link: &LinkConfig, input: &PowerProfile) -> Result<PowerProfile> {
    Ok(run(link, input, None, false)?.pop().expect("at least the launch stage"))
}

/// Launch profile followed by the profile after every element.
pub fn predict_stages(link: &LinkConfig, input: &PowerProfile) -> Result<Vec<PowerProfile>> {
    run(link, input, None, false)
}

/// Output of the virtual "measured" system. With `noise_seed` set every
/// amplifier adds its gain noise from a stream derived from the seed and
/// the element position.
pub fn predict_output_ground_truth(link: &LinkConfig, input: &PowerProfile, noise_seed: Option<u64>) -> Result<PowerProfile> {
    Ok(run(link, input, noise_seed, true)?.pop().expect("at least the launch stage"))
}

pub fn ground_truth_stages(link: &LinkConfig, input: &PowerProfile, noise_seed: Option<u64>) -> Result<Vec<PowerProfile>> {
    run(link, input, noise_seed, true)
}

/// [`predict_output`] recorded on a tape. `x` holds the input profile in dBm.
pub fn predict_output_tape(tape: &mut Tape, link: &LinkConfig, x: Var) -> Result<Var> {
    link.validate()?;
    let total = total_power_dbm_var(tape, x);
    let shift = tape.neg(total);
    let p = tape.add_scalar(x, shift);
    let mut p = tape.offset(p, link.p_launch_dbm);
    for e in &link.elements {
        p = match e {
            LinkElement::Fiber { span, kind } => match link.fiber_kind_of(*kind) {
                FiberModelKind::Bulk => tape.offset(p, -span.loss_db()),
                FiberModelKind::Srs => {
                    let prop = SrsPropagator::new(&link.grid, span, &link.raman)?;
                    let lw = tape.offset(p, -30.0);
                    let lw = tape.scale(lw, LN_10 / 10.0);
                    let out = prop.propagate_tape(tape, lw);
                    let db = tape.scale(out, 10.0 / LN_10);
                    tape.offset(db, 30.0)
                }
            },
            LinkElement::Edfa(stage) => apply_edfa_tape(tape, p, stage.model()?, link.p_launch_dbm),
        };
    }
    Ok(p)
}
