//! Random smooth test profiles.
//!
//! A Gaussian random walk across the channels, smoothed by a normalized
//! all-ones (boxcar) filter and optionally rescaled to an exact excursion.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{excursion, FrequencyGrid, PowerProfile, N_CHANNELS};

/// Boxcar lengths used for batches.
pub const FILTER_LENGTHS: [usize; 5] = [1, 3, 5, 7, 9];

/// SplitMix64 finalizer; gives well-separated per-item seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileGenConfig {
    /// Standard deviation of each walk increment, dB.
    pub sigma_w: f64,
    pub a0_range: (f64, f64),
    /// Odd boxcar length.
    pub filter_length: usize,
    pub target_excursion: Option<f64>,
    pub seed: u64,
}

impl Default for ProfileGenConfig {
    fn default() -> Self {
        Self {
            sigma_w: 1.0,
            a0_range: (-14.0, 0.0),
            filter_length: 5,
            target_excursion: None,
            seed: 0,
        }
    }
}

impl ProfileGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w >= 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::invalid(format!("sigma_w must be ≥ 0, got {}", self.sigma_w)));
        }
        if self.filter_length == 0 || self.filter_length.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "filter_length must be odd and ≥ 1, got {}",
                self.filter_length
            )));
        }
        let (lo, hi) = self.a0_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::invalid(format!("bad a0_range [{lo}, {hi}]")));
        }
        if let Some(e) = self.target_excursion {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::invalid(format!("target_excursion must be ≥ 0, got {e}")));
            }
        }
        Ok(())
    }
}

/// Raw and smoothed walk before any excursion rescaling.
#[derive(Debug, Clone)]
pub struct RandomWalk {
    pub raw: Vec<f64>,
    pub filtered: Vec<f64>,
}

pub fn random_walk(cfg: &ProfileGenConfig) -> Result<RandomWalk> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.a0_range;
    let a0 = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let step = Normal::new(0.0, cfg.sigma_w).map_err(|e| Error::invalid(e.to_string()))?;
    let mut raw = Vec::with_capacity(N_CHANNELS);
    raw.push(a0);
    for n in 1..N_CHANNELS {
        let w = if cfg.sigma_w > 0.0 { step.sample(&mut rng) } else { 0.0 };
        raw.push(raw[n - 1] + w);
    }
    let filtered = boxcar_reflect(&raw, cfg.filter_length);
    Ok(RandomWalk { raw, filtered })
}

/// Moving average of odd length with reflective padding (`c b | a b c`).
pub fn boxcar_reflect(x: &[f64], len: usize) -> Vec<f64> {
    let n = x.len() as isize;
    let half = (len / 2) as isize;
    let at = |j: isize| {
        let mut j = j;
        // Reflect until in range; handles kernels longer than the signal.
        loop {
            if j < 0 {
                j = -j;
            } else if j >= n {
                j = 2 * (n - 1) - j;
            } else {
                return x[j as usize];
            }
        }
    };
    (0..n)
        .map(|i| (i - half..=i + half).map(at).sum::<f64>() / len as f64)
        .collect()
}

/// Affine rescale about the mean so that max − min equals `target`.
/// Profiles with zero spread cannot be stretched and stay flat.
fn rescale_excursion(v: &mut [f64], target: f64) {
    let ex = excursion(v);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if ex > 0.0 {
        let k = target / ex;
        for x in v.iter_mut() {
            *x = mean + (*x - mean) * k;
        }
    } else {
        v.iter_mut().for_each(|x| *x = mean);
    }
}

pub fn random_walk_profile(cfg: &ProfileGenConfig) -> Result<PowerProfile> {
    let mut walk = random_walk(cfg)?.filtered;
    if let Some(target) = cfg.target_excursion {
        rescale_excursion(&mut walk, target);
    }
    PowerProfile::new(FrequencyGrid::c_band(), walk, crate::grid::PowerUnit::Dbm)
}

#[derive(Debug, Clone)]
pub struct GeneratedProfile {
    pub profile: PowerProfile,
    pub seed: u64,
    pub excursion_db: f64,
    pub filter_length: usize,
}

/// `n` profiles with excursions drawn uniformly from `excursion_range`
/// and mixed filter lengths. Profile `i` depends only on `(seed, i)`.
pub fn generate_batch(
    n: usize,
    excursion_range: (f64, f64),
    seed: u64,
) -> Result<Vec<GeneratedProfile>> {
    if n == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let (lo, hi) = excursion_range;
    if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
        return Err(Error::invalid(format!("bad excursion range [{lo}, {hi}]")));
    }
    (0..n)
        .map(|i| {
            let item_seed = derive_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
            let excursion_db = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let filter_length = FILTER_LENGTHS[rng.random_range(0..FILTER_LENGTHS.len())];
            let cfg = ProfileGenConfig {
                sigma_w: 1.0,
                a0_range: (-14.0, 0.0),
                filter_length,
                target_excursion: Some(excursion_db),
                seed: rng.next_u64(),
            };
            Ok(GeneratedProfile {
                profile: random_walk_profile(&cfg)?,
                seed: item_seed,
                excursion_db,
                filter_length,
            })
        })
        .collect()
}
