//! Amplifier models: the parametric virtual device used as ground truth,
//! the MLP gain surrogate and constant-output-power application of either.

mod dataset;
mod device;
mod mlp;
mod train;

pub use dataset::{
    generate_training_set, GainDataset, GainSample, PROFILE_EXCURSION_RANGE, TOTAL_IN_RANGE, TOTAL_OUT_RANGE,
};
pub use device::{VirtualEdfaDevice, PERTURB_FRACTION, PERTURB_PHASE_RAD};
pub use mlp::{DenseLayer, EdfaMlp, FeatureScaling, INPUT_DIM, LAYER_DIMS};
pub use train::{dataset_mse, train_edfa_model, train_edfa_model_with, EpochStats, TrainingConfig, TrainingReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{normalize_db, normalize_var, total_power_dbm, total_power_dbm_var, PowerProfile, N_CHANNELS};

/// Network inputs: profile shape plus the two total powers in dBm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdfaFeatures {
    /// Input profile shifted so its maximum is 0 dB.
    pub normalized_profile: Vec<f64>,
    pub total_in: f64,
    pub total_out: f64,
}

impl EdfaFeatures {
    pub fn new(normalized_profile: Vec<f64>, total_in: f64, total_out: f64) -> Result<Self> {
        if normalized_profile.len() != N_CHANNELS {
            return Err(Error::invalid(format!(
                "normalized profile has {} channels, expected {N_CHANNELS}",
                normalized_profile.len()
            )));
        }
        if !normalized_profile.iter().all(|v| v.is_finite()) || !total_in.is_finite() || !total_out.is_finite() {
            return Err(Error::invalid("EDFA features must be finite"));
        }
        let max = normalized_profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max.abs() > 1e-9 {
            return Err(Error::invalid(format!("normalized profile has maximum {max}, expected 0")));
        }
        Ok(Self {
            normalized_profile,
            total_in,
            total_out,
        })
    }

    pub fn from_profile(profile: &PowerProfile, total_out: f64) -> Result<Self> {
        let dbm = profile.to_dbm()?;
        let v = dbm.values();
        Self::new(normalize_db(v), total_power_dbm(v), total_out)
    }
}

/// Adds `gain` to `profile` and shifts the result so its total is `p_out`.
pub fn apply_gain(profile: &PowerProfile, gain: &[f64], p_out: f64) -> Result<PowerProfile> {
    let dbm = profile.to_dbm()?;
    if gain.len() != dbm.values().len() {
        return Err(Error::invalid("gain vector length does not match the profile"));
    }
    let raw: Vec<f64> = dbm.values().iter().zip(gain).map(|(p, g)| p + g).collect();
    let c = p_out - total_power_dbm(&raw);
    PowerProfile::from_dbm(raw.into_iter().map(|v| v + c).collect())
}

/// Constant-output-power amplifier driven by the surrogate.
pub fn apply_edfa(profile: &PowerProfile, model: &EdfaMlp, p_out: f64) -> Result<PowerProfile> {
    let feat = EdfaFeatures::from_profile(profile, p_out)?;
    apply_gain(profile, &model.forward(&feat), p_out)
}

/// Constant-output-power amplifier driven by a virtual device.
pub fn apply_virtual_edfa<R: Rng + ?Sized>(
    profile: &PowerProfile,
    device: &VirtualEdfaDevice,
    p_out: f64,
    rng: Option<&mut R>,
) -> Result<PowerProfile> {
    let feat = EdfaFeatures::from_profile(profile, p_out)?;
    apply_gain(profile, &device.virtual_gain(&feat, rng), p_out)
}

/// [`apply_edfa`] recorded on a tape; `x` holds the input profile in dBm.
pub fn apply_edfa_tape(tape: &mut Tape, x: Var, model: &EdfaMlp, p_out: f64) -> Var {
    let shape = normalize_var(tape, x);
    let total_in = total_power_dbm_var(tape, x);
    let total_in = tape.scale(total_in, 1.0 / model.scaling.totals_divisor);
    let total_out = tape.constant(vec![p_out / model.scaling.totals_divisor]);
    let features = tape.concat(&[shape, total_in, total_out]);
    let gain = model.forward_tape(tape, features);
    let raw = tape.add(x, gain);
    let total_raw = total_power_dbm_var(tape, raw);
    let shift = tape.neg(total_raw);
    let out = tape.add_scalar(raw, shift);
    tape.offset(out, p_out)
}
