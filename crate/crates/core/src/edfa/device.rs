use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EdfaFeatures;
use crate::error::{Error, Result};
use crate::grid::N_CHANNELS;

/// Relative spread applied to the shape parameters of a perturbed device.
pub const PERTURB_FRACTION: f64 = 0.05;
/// Additive spread of the ripple phase of a perturbed device, rad.
pub const PERTURB_PHASE_RAD: f64 = 0.3;

/// Parametric stand-in for a physical amplifier.
///
/// Gain tilts downward toward high frequencies in proportion to the gain
/// deficit `g_ref − G_avg`, so the excursion grows as the average gain drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VirtualEdfaDevice {
    pub id: String,
    pub g_ref: f64,
    pub tilt_coeff: f64,
    pub ripple_amp: f64,
    /// In channels.
    pub ripple_period: f64,
    pub ripple_phase: f64,
    pub shb_coeff: f64,
    pub noise_sigma: f64,
}

impl Default for VirtualEdfaDevice {
    fn default() -> Self {
        Self {
            id: "A1".into(),
            g_ref: 28.0,
            tilt_coeff: 0.30,
            ripple_amp: 0.4,
            ripple_period: 19.0,
            ripple_phase: 0.0,
            shb_coeff: 0.05,
            noise_sigma: 0.02,
        }
    }
}

impl VirtualEdfaDevice {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("g_ref", self.g_ref),
            ("tilt_coeff", self.tilt_coeff),
            ("ripple_amp", self.ripple_amp),
            ("ripple_period", self.ripple_period),
            ("ripple_phase", self.ripple_phase),
            ("shb_coeff", self.shb_coeff),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::Config(format!("device field `{name}` must be finite, got {v}")));
            }
        }
        if self.ripple_period <= 0.0 {
            return Err(Error::Config(format!(
                "device field `ripple_period` must be positive, got {}",
                self.ripple_period
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "device field `noise_sigma` must be ≥ 0, got {}",
                self.noise_sigma
            )));
        }
        if self.ripple_amp < 0.0 {
            return Err(Error::Config(format!(
                "device field `ripple_amp` must be ≥ 0, got {}",
                self.ripple_amp
            )));
        }
        Ok(())
    }

    /// Same make, different unit: shape parameters scaled by independent
    /// factors in `1 ± 5%`, ripple phase shifted by up to ±0.3 rad.
    pub fn perturbed(&self, id: impl Into<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factor = || 1.0 + rng.random_range(-PERTURB_FRACTION..=PERTURB_FRACTION);
        let tilt_coeff = self.tilt_coeff * factor();
        let ripple_amp = self.ripple_amp * factor();
        let shb_coeff = self.shb_coeff * factor();
        let ripple_phase =
            self.ripple_phase + rng.random_range(-PERTURB_PHASE_RAD..=PERTURB_PHASE_RAD);
        Self {
            id: id.into(),
            tilt_coeff,
            ripple_amp,
            shb_coeff,
            ripple_phase,
            ..self.clone()
        }
    }

    /// Per-channel gain in dB. Noise is added only when `rng` is given.
    pub fn virtual_gain<R: Rng + ?Sized>(&self, feat: &EdfaFeatures, rng: Option<&mut R>) -> Vec<f64> {
        let g_avg = feat.total_out - feat.total_in;
        let deficit = self.g_ref - g_avg;
        let p = &feat.normalized_profile;
        let p_mean = p.iter().sum::<f64>() / p.len() as f64;
        let mut gain: Vec<f64> = (0..N_CHANNELS)
            .map(|n| {
                let x = 2.0 * n as f64 / (N_CHANNELS - 1) as f64 - 1.0;
                let ripple = self.ripple_amp * (2.0 * PI * n as f64 / self.ripple_period + self.ripple_phase).sin();
                g_avg - self.tilt_coeff * deficit * x + ripple + self.shb_coeff * (p[n] - p_mean)
            })
            .collect();
        if let Some(rng) = rng {
            if self.noise_sigma > 0.0 {
                let noise = Normal::new(0.0, self.noise_sigma).expect("validated sigma");
                for g in &mut gain {
                    *g += noise.sample(rng);
                }
            }
        }
        gain
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("device serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dev: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        dev.validate()?;
        Ok(dev)
    }
}
