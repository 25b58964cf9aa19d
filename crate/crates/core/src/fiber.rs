//! Power evolution through a fiber span.
//!
//! Two models are available: a frequency-flat bulk loss, and a stepped
//! inter-channel stimulated Raman scattering (SRS) model in which every
//! step of length `L_s` updates the natural-log channel powers as
//!
//! ```text
//! P_n ← P_n − α·L_s + Σ_m g(f_m − f_n) · L_eff(L_s) · exp(P_m)
//! ```
//!
//! with all channels updated from the pre-step state (explicit Euler).
//! `g` is the Raman efficiency in 1/(W·m), already divided by the
//! effective area, and is antisymmetric in the frequency offset so power
//! flows from high to low frequencies.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{FrequencyGrid, PowerProfile, PowerUnit};
use crate::linalg::Matrix;

/// Effective area at which [`RamanGainModel::slope`] is specified.
pub const REFERENCE_AEFF_M2: f64 = 80e-12;

const SERIES_LIMIT: f64 = 1e-9;

/// dB/km → nepers (power) per metre.
pub fn db_per_km_to_np_per_m(alpha_db_per_km: f64) -> f64 {
    alpha_db_per_km * std::f64::consts::LN_10 / 10.0 / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiberModelKind {
    Bulk,
    Srs,
}

impl std::str::FromStr for FiberModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bulk" => Ok(FiberModelKind::Bulk),
            "srs" => Ok(FiberModelKind::Srs),
            other => Err(Error::invalid(format!(
                "unknown fiber model `{other}` (expected `bulk` or `srs`)"
            ))),
        }
    }
}

impl std::fmt::Display for FiberModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FiberModelKind::Bulk => "bulk",
            FiberModelKind::Srs => "srs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSpan {
    pub length_km: f64,
    pub alpha_db_per_km: f64,
    pub a_eff_m2: f64,
    pub step_m: f64,
    /// Multiplier on α inside the effective-length formula.
    pub leff_alpha_factor: f64,
}

impl FiberSpan {
    /// Standard single-mode fiber of the given length.
    pub fn new(length_km: f64) -> Result<Self> {
        let span = Self {
            length_km,
            alpha_db_per_km: 0.2,
            a_eff_m2: REFERENCE_AEFF_M2,
            step_m: 100.0,
            leff_alpha_factor: 2.0,
        };
        span.validate()?;
        Ok(span)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("fiber {name} must be positive, got {v}")))
            }
        };
        positive(self.length_km, "length_km")?;
        positive(self.alpha_db_per_km, "alpha_db_per_km")?;
        positive(self.a_eff_m2, "a_eff")?;
        positive(self.step_m, "step_m")?;
        positive(self.leff_alpha_factor, "leff_alpha_factor")?;
        if self.step_m > self.length_km * 1000.0 {
            return Err(Error::invalid(format!(
                "fiber step {} m exceeds span length {} km",
                self.step_m, self.length_km
            )));
        }
        Ok(())
    }

    pub fn loss_db(&self) -> f64 {
        self.alpha_db_per_km * self.length_km
    }

    pub fn alpha_np_per_m(&self) -> f64 {
        db_per_km_to_np_per_m(self.alpha_db_per_km)
    }

    /// Step lengths in metres: full steps followed by an optional shorter one.
    pub fn step_lengths(&self) -> (usize, Option<f64>) {
        let total = self.length_km * 1000.0;
        let n_full = (total / self.step_m).floor() as usize;
        let rem = total - n_full as f64 * self.step_m;
        // Ignore floating residue from the division.
        if rem > 1e-6 {
            (n_full, Some(rem))
        } else {
            (n_full, None)
        }
    }
}

/// Triangular Raman efficiency curve folded with the effective area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RamanGainModel {
    /// Efficiency slope in 1/(W·m·THz) at [`REFERENCE_AEFF_M2`].
    pub slope: f64,
    pub peak_offset_thz: f64,
    pub cutoff_thz: f64,
}

impl Default for RamanGainModel {
    fn default() -> Self {
        Self {
            slope: 3.0e-5,
            peak_offset_thz: 13.2,
            cutoff_thz: 15.0,
        }
    }
}

impl RamanGainModel {
    /// No inter-channel coupling.
    pub fn disabled() -> Self {
        Self {
            slope: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return Err(Error::invalid(format!(
                "raman slope must be non-negative, got {}",
                self.slope
            )));
        }
        if !(self.peak_offset_thz > 0.0 && self.cutoff_thz > self.peak_offset_thz) {
            return Err(Error::invalid(format!(
                "raman curve needs 0 < peak_offset ({}) < cutoff ({})",
                self.peak_offset_thz, self.cutoff_thz
            )));
        }
        Ok(())
    }

    /// Raman efficiency in 1/(W·m) for a pump `df_thz` above the signal,
    /// at the reference effective area. Antisymmetric in `df_thz`.
    pub fn gain_coefficient(&self, df_thz: f64) -> f64 {
        let a = df_thz.abs();
        let mag = if a <= self.peak_offset_thz {
            self.slope * a
        } else if a <= self.cutoff_thz {
            self.slope * self.peak_offset_thz * (self.cutoff_thz - a)
                / (self.cutoff_thz - self.peak_offset_thz)
        } else {
            0.0
        };
        if df_thz < 0.0 {
            -mag
        } else {
            mag
        }
    }

    /// Coupling matrix `C[n][m] = g(f_m − f_n)` scaled to the given area.
    pub fn coupling_matrix(&self, grid: &FrequencyGrid, a_eff_m2: f64) -> Matrix {
        let area = REFERENCE_AEFF_M2 / a_eff_m2;
        let n = grid.n_channels();
        Matrix::from_fn(n, n, |r, c| {
            area * self.gain_coefficient(grid.frequency(c) - grid.frequency(r))
        })
    }
}

/// `(1 − exp(−k·α·L)) / (k·α)` with `k = leff_alpha_factor`.
pub fn effective_length_with_factor(length_m: f64, alpha_np_per_m: f64, factor: f64) -> Result<f64> {
    if !(length_m >= 0.0) || !(alpha_np_per_m >= 0.0) {
        return Err(Error::invalid(format!(
            "effective length needs non-negative length and attenuation, got L={length_m}, α={alpha_np_per_m}"
        )));
    }
    let ka = factor * alpha_np_per_m;
    if ka * length_m < SERIES_LIMIT {
        return Ok(length_m);
    }
    Ok(-(-ka * length_m).exp_m1() / ka)
}

/// Effective interaction length with the default factor of 2.
pub fn effective_length(length_m: f64, alpha_np_per_m: f64) -> Result<f64> {
    effective_length_with_factor(length_m, alpha_np_per_m, 2.0)
}

/// Frequency-flat attenuation by `alpha·length` dB. Keeps the input unit.
pub fn propagate_bulk(profile: &PowerProfile, span: &FiberSpan) -> Result<PowerProfile> {
    let loss_db = span.loss_db();
    let values = match profile.unit() {
        PowerUnit::Dbm => profile.values().iter().map(|v| v - loss_db).collect(),
        PowerUnit::LogWatts => {
            let loss_np = loss_db * std::f64::consts::LN_10 / 10.0;
            profile.values().iter().map(|v| v - loss_np).collect()
        }
        PowerUnit::Watts => {
            let factor = 10f64.powf(-loss_db / 10.0);
            profile.values().iter().map(|v| v * factor).collect()
        }
    };
    PowerProfile::new(*profile.grid(), values, profile.unit())
}

/// One Euler step in the log-watt domain with a pre-scaled coupling
/// matrix (`C · L_eff(step)`) and per-step loss in nepers.
pub fn srs_step_values(log_w: &[f64], coupling_leff: &Matrix, loss_np: f64) -> Vec<f64> {
    let lin: Vec<f64> = log_w.iter().map(|p| p.exp()).collect();
    let inc = coupling_leff.matvec(&lin);
    log_w
        .iter()
        .zip(&inc)
        .map(|(p, d)| (p + d) + (-loss_np))
        .collect()
}

/// A single step of length `span.step_m` applied to a log-watt profile.
pub fn srs_step(
    profile: &PowerProfile,
    span: &FiberSpan,
    raman: &RamanGainModel,
) -> Result<PowerProfile> {
    if profile.unit() != PowerUnit::LogWatts {
        return Err(Error::invalid(format!(
            "srs_step expects a log-watt profile, got {}",
            profile.unit()
        )));
    }
    let prop = SrsPropagator::new(profile.grid(), span, raman)?;
    let values = srs_step_values(profile.values(), &prop.full.coupling, prop.full.loss_np);
    PowerProfile::new(*profile.grid(), values, PowerUnit::LogWatts)
}

#[derive(Debug, Clone)]
struct StepKernel {
    coupling: Arc<Matrix>,
    loss_np: f64,
}

impl StepKernel {
    fn new(base: &Matrix, length_m: f64, span: &FiberSpan) -> Result<Self> {
        let alpha = span.alpha_np_per_m();
        let leff = effective_length_with_factor(length_m, alpha, span.leff_alpha_factor)?;
        Ok(Self {
            coupling: Arc::new(base.scaled(leff)),
            loss_np: alpha * length_m,
        })
    }
}

/// Precomputed per-step kernels for one span, reusable across profiles.
#[derive(Debug, Clone)]
pub struct SrsPropagator {
    full: StepKernel,
    n_full: usize,
    last: Option<StepKernel>,
}

impl SrsPropagator {
    pub fn new(grid: &FrequencyGrid, span: &FiberSpan, raman: &RamanGainModel) -> Result<Self> {
        span.validate()?;
        raman.validate()?;
        let base = raman.coupling_matrix(grid, span.a_eff_m2);
        let (n_full, rem) = span.step_lengths();
        let full = StepKernel::new(&base, span.step_m, span)?;
        let last = rem.map(|r| StepKernel::new(&base, r, span)).transpose()?;
        Ok(Self { full, n_full, last })
    }

    pub fn n_steps(&self) -> usize {
        self.n_full + usize::from(self.last.is_some())
    }

    /// Kernels in order, each with the loss accumulated before it.
    fn kernels(&self) -> impl Iterator<Item = (&StepKernel, f64)> {
        let full = &self.full;
        (0..self.n_full)
            .map(move |j| (full, j as f64 * full.loss_np))
            .chain(self.last.iter().map(|k| (k, self.n_full as f64 * full.loss_np)))
    }

    fn total_loss_np(&self) -> f64 {
        self.n_full as f64 * self.full.loss_np + self.last.as_ref().map_or(0.0, |k| k.loss_np)
    }

    /// Raman increments are summed apart from the launch value and the loss
    /// is taken in closed form, so rounding does not build up over the
    /// thousands of steps of a span.
    pub fn propagate_log_watts(&self, log_w: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; log_w.len()];
        for (k, lost) in self.kernels() {
            let lin: Vec<f64> = log_w.iter().zip(&acc).map(|(p, a)| ((p - lost) + a).exp()).collect();
            for (a, d) in acc.iter_mut().zip(k.coupling.matvec(&lin)) {
                *a += d;
            }
        }
        let lost = self.total_loss_np();
        log_w.iter().zip(&acc).map(|(p, a)| (p - lost) + a).collect()
    }

    /// Same arithmetic as [`Self::propagate_log_watts`], recorded on a tape.
    pub fn propagate_tape(&self, tape: &mut Tape, log_w: Var) -> Var {
        let mut acc: Option<Var> = None;
        for (k, lost) in self.kernels() {
            let shifted = tape.offset(log_w, -lost);
            let p = match acc {
                Some(a) => tape.add(shifted, a),
                None => shifted,
            };
            let lin = tape.exp(p);
            let inc = tape.affine(k.coupling.clone(), lin);
            acc = Some(match acc {
                Some(a) => tape.add(a, inc),
                None => inc,
            });
        }
        let out = tape.offset(log_w, -self.total_loss_np());
        match acc {
            Some(a) => tape.add(out, a),
            None => out,
        }
    }
}

/// Full-span SRS propagation. Returns the profile in its input unit.
pub fn propagate_srs(
    profile: &PowerProfile,
    span: &FiberSpan,
    raman: &RamanGainModel,
) -> Result<PowerProfile> {
    let prop = SrsPropagator::new(profile.grid(), span, raman)?;
    let lw = profile.convert(PowerUnit::LogWatts)?;
    let out = prop.propagate_log_watts(lw.values());
    PowerProfile::new(*profile.grid(), out, PowerUnit::LogWatts)?.convert(profile.unit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, FLOOR_DBM, N_CHANNELS};
    use proptest::prelude::*;

    const NP_TO_DB: f64 = 10.0 / std::f64::consts::LN_10;

    fn alpha02() -> f64 {
        db_per_km_to_np_per_m(0.2)
    }

    /// Composite Simpson rule for ∫₀ᴸ exp(−2αz) dz.
    fn leff_quadrature(l: f64, alpha: f64) -> f64 {
        let n = 20_000;
        let h = l / n as f64;
        let f = |z: f64| (-2.0 * alpha * z).exp();
        let mut s = f(0.0) + f(l);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn effective_length_examples() {
        let a = alpha02();
        assert!((a - 4.605e-5).abs() < 1e-8);
        let l = effective_length(100.0, a).unwrap();
        assert!((l - 99.54).abs() < 0.01);
        assert!((l - leff_quadrature(100.0, a)).abs() < 1e-9);
        assert_eq!(effective_length(1234.5, 0.0).unwrap(), 1234.5);
        let big = effective_length(1e9, a).unwrap();
        assert!((big - 1.0 / (2.0 * a)).abs() < 1.0);
        assert!((big - 10_857.0).abs() < 1.0);
        assert!(effective_length(-1.0, a).is_err());
        assert!(effective_length(1.0, -a).is_err());
    }

    #[test]
    fn effective_length_factor_one() {
        let a = alpha02();
        let l = effective_length_with_factor(80_000.0, a, 1.0).unwrap();
        assert!((l - (1.0 - (-a * 80_000.0).exp()) / a).abs() < 1e-6);
    }

    #[test]
    fn raman_curve_shape() {
        let r = RamanGainModel::default();
        assert_eq!(r.gain_coefficient(0.0), 0.0);
        for df in [0.05, 1.0, 4.1, 13.2, 14.0, 15.0, 20.0] {
            assert_eq!(r.gain_coefficient(-df), -r.gain_coefficient(df));
        }
        assert!((r.gain_coefficient(4.1) - 3.0e-5 * 4.1).abs() < 1e-18);
        assert!((r.gain_coefficient(13.2) - 3.0e-5 * 13.2).abs() < 1e-18);
        assert!((r.gain_coefficient(14.1) - 3.0e-5 * 13.2 * 0.5).abs() < 1e-12);
        assert_eq!(r.gain_coefficient(15.0), 0.0);
        assert_eq!(r.gain_coefficient(16.0), 0.0);
        // ≈ 0.4 /W/km at the peak
        assert!((r.gain_coefficient(13.2) * 1000.0 - 0.396).abs() < 1e-9);
    }

    #[test]
    fn bulk_examples() {
        let span = FiberSpan::new(100.0).unwrap();
        let flat = PowerProfile::flat(build_grid(), 0.0);
        let out = propagate_bulk(&flat, &span).unwrap();
        assert!(out.values().iter().all(|&v| (v + 20.0).abs() < 1e-12));
        let t_in = flat.total_power_dbm().unwrap();
        let t_out = out.total_power_dbm().unwrap();
        assert!((t_in - t_out - 20.0).abs() < 1e-12);

        let lw = flat.convert(PowerUnit::LogWatts).unwrap();
        let out_lw = propagate_bulk(&lw, &span).unwrap().to_dbm().unwrap();
        for v in out_lw.values() {
            assert!((v + 20.0).abs() < 1e-12);
        }
    }

    fn two_channel_log_w(p_dbm: f64) -> PowerProfile {
        let mut v = vec![FLOOR_DBM; N_CHANNELS];
        v[0] = p_dbm;
        v[82] = p_dbm;
        PowerProfile::from_dbm(v)
            .unwrap()
            .convert(PowerUnit::LogWatts)
            .unwrap()
    }

    #[test]
    fn srs_step_single_channel_is_pure_loss() {
        let span = FiberSpan::new(1.0).unwrap();
        let mut v = vec![FLOOR_DBM; N_CHANNELS];
        v[40] = 10.0;
        let p = PowerProfile::from_dbm(v).unwrap().convert(PowerUnit::LogWatts).unwrap();
        let out = srs_step(&p, &span, &RamanGainModel::default()).unwrap();
        let inc = out.values()[40] - p.values()[40];
        assert!((inc + span.alpha_np_per_m() * 100.0).abs() < 1e-9);
    }

    #[test]
    fn srs_step_two_channel_exchange() {
        let span = FiberSpan::new(1.0).unwrap();
        let raman = RamanGainModel::default();
        let p = two_channel_log_w(10.0);
        let out = srs_step(&p, &span, &raman).unwrap();
        let loss = span.alpha_np_per_m() * span.step_m;
        let d_low = out.values()[0] - p.values()[0] + loss;
        let d_high = out.values()[82] - p.values()[82] + loss;

        // hand evaluation: c_r·Δf·L_eff(100 m)·10 mW
        let expected_np = 3.0e-5 * 4.1 * effective_length(100.0, alpha02()).unwrap() * 0.01;
        assert!((expected_np - 1.22e-4).abs() < 1e-6);
        let expected_db = expected_np * NP_TO_DB;
        assert!((expected_db - 5.3e-4).abs() < 0.05 * 5.3e-4);
        // the floor channels contribute ~1e-11 nats on top
        assert!((d_low - expected_np).abs() < 1e-9);
        assert!((d_high + expected_np).abs() < 1e-9);
        assert!((d_low * NP_TO_DB - 5.3e-4).abs() < 0.05 * 5.3e-4);
    }

    #[test]
    fn srs_step_equal_pair_is_exactly_antisymmetric() {
        let span = FiberSpan::new(1.0).unwrap();
        let raman = RamanGainModel::default();
        // Only two channels exist at non-negligible power; use a coupling
        // restricted to them to compare the raw increments.
        let c = raman.coupling_matrix(&build_grid(), span.a_eff_m2);
        let p = [dbm_to_lw(12.0), dbm_to_lw(12.0)];
        let sub = Matrix::from_fn(2, 2, |r, col| c.get([0, 82][r], [0, 82][col]));
        let out = srs_step_values(&p, &sub, 0.0);
        assert_eq!(out[0] - p[0], -(out[1] - p[1]));
    }

    fn dbm_to_lw(d: f64) -> f64 {
        crate::grid::dbm_to_log_watts(d)
    }

    #[test]
    fn srs_step_conserves_power_without_loss() {
        let mut span = FiberSpan::new(1.0).unwrap();
        span.alpha_db_per_km = 1e-30;
        let raman = RamanGainModel::default();
        let p = PowerProfile::flat(build_grid(), 5.0)
            .convert(PowerUnit::LogWatts)
            .unwrap();
        let out = srs_step(&p, &span, &raman).unwrap();
        let before: Vec<f64> = p.values().iter().map(|v| v.exp()).collect();
        let after: Vec<f64> = out.values().iter().map(|v| v.exp()).collect();
        // Oracle: sum the pairwise exchange terms directly.
        let c = raman.coupling_matrix(&build_grid(), span.a_eff_m2);
        let leff = effective_length_with_factor(span.step_m, span.alpha_np_per_m(), 2.0).unwrap();
        let mut pair_sum = 0.0;
        for n in 0..N_CHANNELS {
            for m in 0..N_CHANNELS {
                pair_sum += before[n] * c.get(n, m) * leff * before[m];
            }
        }
        assert!(pair_sum.abs() < 1e-18);
        let total_before: f64 = before.iter().sum();
        let change: f64 = after.iter().sum::<f64>() - total_before;
        assert!(change.abs() / total_before < 1e-6, "relative change {}", change / total_before);
    }

    #[test]
    fn srs_single_channel_matches_bulk() {
        let span = FiberSpan::new(100.0).unwrap();
        let mut v = vec![FLOOR_DBM; N_CHANNELS];
        v[0] = 18.0;
        let p = PowerProfile::from_dbm(v).unwrap();
        let srs = propagate_srs(&p, &span, &RamanGainModel::default()).unwrap();
        let bulk = propagate_bulk(&p, &span).unwrap();
        assert!((srs.values()[0] - bulk.values()[0]).abs() < 1e-6);
    }

    #[test]
    fn srs_floor_profile_matches_bulk() {
        let span = FiberSpan::new(100.0).unwrap();
        let p = PowerProfile::flat(build_grid(), FLOOR_DBM);
        let srs = propagate_srs(&p, &span, &RamanGainModel::default()).unwrap();
        let bulk = propagate_bulk(&p, &span).unwrap();
        for (a, b) in srs.values().iter().zip(bulk.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn srs_without_coupling_is_bulk() {
        let span = FiberSpan::new(87.65).unwrap();
        let p = PowerProfile::from_dbm((0..N_CHANNELS).map(|k| (k as f64 * 0.3).sin() * 4.0).collect())
            .unwrap();
        let srs = propagate_srs(&p, &span, &RamanGainModel::disabled()).unwrap();
        let bulk = propagate_bulk(&p, &span).unwrap();
        for (a, b) in srs.values().iter().zip(bulk.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn partial_last_step() {
        let mut span = FiberSpan::new(0.25).unwrap();
        span.step_m = 100.0;
        let (n, rem) = span.step_lengths();
        assert_eq!(n, 2);
        assert!((rem.unwrap() - 50.0).abs() < 1e-9);
        let prop = SrsPropagator::new(&build_grid(), &span, &RamanGainModel::default()).unwrap();
        assert_eq!(prop.n_steps(), 3);
        let exact = FiberSpan::new(90.0).unwrap();
        assert_eq!(exact.step_lengths(), (900, None));
    }

    #[test]
    fn tape_path_matches_plain_path() {
        let span = FiberSpan::new(20.0).unwrap();
        let prop = SrsPropagator::new(&build_grid(), &span, &RamanGainModel::default()).unwrap();
        let p: Vec<f64> = (0..N_CHANNELS).map(|k| dbm_to_lw(2.0 + (k as f64 * 0.2).cos())).collect();
        let plain = prop.propagate_log_watts(&p);
        let mut t = Tape::new();
        let x = t.constant(p);
        let y = prop.propagate_tape(&mut t, x);
        assert_eq!(t.value(y), plain.as_slice());
    }

    #[test]
    fn step_halving_converges() {
        let grid = build_grid();
        // 21 dBm total, tilted
        let base = PowerProfile::from_dbm((0..N_CHANNELS).map(|k| -0.05 * k as f64).collect())
            .unwrap()
            .with_total_dbm(21.0)
            .unwrap();
        let raman = RamanGainModel::default();
        let coarse = FiberSpan::new(100.0).unwrap();
        let fine = FiberSpan {
            step_m: 50.0,
            ..coarse
        };
        let a = propagate_srs(&base, &coarse, &raman).unwrap();
        let b = propagate_srs(&base, &fine, &raman).unwrap();
        let worst = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.01, "step halving moved a channel by {worst} dB");
        assert_eq!(grid, *a.grid());
    }

    #[test]
    fn deterministic_bitwise() {
        let span = FiberSpan::new(50.0).unwrap();
        let p = PowerProfile::flat(build_grid(), 0.0);
        let a = propagate_srs(&p, &span, &RamanGainModel::default()).unwrap();
        let b = propagate_srs(&p, &span, &RamanGainModel::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_spans() {
        assert!(FiberSpan::new(0.0).is_err());
        let mut s = FiberSpan::new(1.0).unwrap();
        s.step_m = 2000.0;
        assert!(s.validate().is_err());
        s.step_m = 100.0;
        s.alpha_db_per_km = 0.0;
        assert!(s.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn srs_tilts_toward_low_frequencies(
            v in proptest::collection::vec(-10.0f64..0.0, N_CHANNELS),
            total in 10.0f64..21.0,
        ) {
            let span = FiberSpan::new(60.0).unwrap();
            let p = PowerProfile::from_dbm(v).unwrap().with_total_dbm(total).unwrap();
            let srs = propagate_srs(&p, &span, &RamanGainModel::default()).unwrap();
            let bulk = propagate_bulk(&p, &span).unwrap();
            prop_assert!(srs.values()[0] >= bulk.values()[0]);
            prop_assert!(srs.values()[82] <= bulk.values()[82]);
        }
    }
}
