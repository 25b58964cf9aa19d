//! Launch-profile optimization by projected gradient descent through the
//! differentiable link, plus the reference input profiles it is compared
//! against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cascade::{predict_output, predict_output_tape, LinkConfig};
use crate::error::{Error, Result};
use crate::grid::{excursion, normalize_db, normalize_var, PowerProfile};
use crate::profiles::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// `−min` of the normalized output.
    MinFlatness,
    /// Mean squared dB distance between normalized output and target.
    TargetMse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationConfig {
    pub cost: CostKind,
    pub target: Option<PowerProfile>,
    pub max_iters: usize,
    pub step_size_db: f64,
    pub stall_tol: f64,
    pub stall_window: usize,
    pub excursion_bound: f64,
    /// Number of starts; starts after the first are jittered.
    pub restarts: usize,
    pub seed: u64,
    /// Odd moving-average length applied to the gradient before each step;
    /// 1 uses the raw gradient.
    pub gradient_smoothing: usize,
    /// Replaces the exact minimum of the flatness cost by a softmin with
    /// this temperature, dB.
    pub softmin_tau: Option<f64>,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            cost: CostKind::MinFlatness,
            target: None,
            max_iters: 500,
            step_size_db: 0.2,
            stall_tol: 1e-4,
            stall_window: 20,
            excursion_bound: 25.0,
            restarts: 1,
            seed: 0,
            gradient_smoothing: 5,
            softmin_tau: None,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.excursion_bound > 0.0 && self.excursion_bound.is_finite()) {
            return Err(Error::Config(format!(
                "`excursion_bound` must be positive, got {}",
                self.excursion_bound
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("`max_iters` must be at least 1".into()));
        }
        if !(self.step_size_db > 0.0 && self.step_size_db.is_finite()) {
            return Err(Error::Config(format!("`step_size_db` must be positive, got {}", self.step_size_db)));
        }
        if self.restarts == 0 {
            return Err(Error::Config("`restarts` must be at least 1".into()));
        }
        if self.gradient_smoothing.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "`gradient_smoothing` must be odd, got {}",
                self.gradient_smoothing
            )));
        }
        if let Some(t) = self.softmin_tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("`softmin_tau` must be positive, got {t}")));
            }
        }
        if self.cost == CostKind::TargetMse && self.target.is_none() {
            return Err(Error::Config("target-mse cost needs a target profile".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    /// Normalized launch profile (max 0 dB).
    pub input: PowerProfile,
    /// Cost after every iteration, starting with the initial profile.
    pub trace: Vec<f64>,
    /// Predicted output for `input`.
    pub output: PowerProfile,
    pub converged: bool,
    pub iterations: usize,
}

impl OptimizationResult {
    pub fn final_cost(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial cost")
    }

    pub fn write_trace_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::invalid(format!("writing trace: {e}"));
        csv.write_record(["iter", "cost_db"]).map_err(err)?;
        for (i, c) in self.trace.iter().enumerate() {
            csv.write_record([i.to_string(), c.to_string()]).map_err(err)?;
        }
        csv.flush().map_err(|e| Error::io("<trace>", e))
    }
}

/// `−min(normalize(values))`, i.e. the peak-to-peak excursion.
pub fn min_flatness(values: &[f64]) -> f64 {
    let n = normalize_db(values);
    -n.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn target_mse(output: &[f64], target: &[f64]) -> Result<f64> {
    if output.len() != target.len() {
        return Err(Error::invalid(format!(
            "output has {} channels, target has {}",
            output.len(),
            target.len()
        )));
    }
    let (a, b) = (normalize_db(output), normalize_db(target));
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

pub fn cost_min_flatness(output: &PowerProfile) -> Result<f64> {
    Ok(min_flatness(output.to_dbm()?.values()))
}

pub fn cost_target_mse(output: &PowerProfile, target: &PowerProfile) -> Result<f64> {
    target_mse(output.to_dbm()?.values(), target.to_dbm()?.values())
}

/// Cost of a dBm output vector recorded on a tape. `softmin_tau` swaps the
/// exact minimum of the flatness cost for a softmin.
pub fn cost_tape(tape: &mut Tape, output: Var, kind: CostKind, target: Option<&[f64]>, softmin_tau: Option<f64>) -> Var {
    let n = normalize_var(tape, output);
    match kind {
        CostKind::MinFlatness => {
            let m = match softmin_tau {
                Some(tau) => tape.softmin(n, tau),
                None => tape.min(n),
            };
            tape.neg(m)
        }
        CostKind::TargetMse => {
            let t = tape.constant(normalize_db(target.expect("validated target")));
            let d = tape.sub(n, t);
            let sq = tape.powi(d, 2);
            tape.mean(sq)
        }
    }
}

/// Renormalize to max 0 dB, then clamp at `−bound`.
pub fn project(values: &[f64], bound: f64) -> Vec<f64> {
    normalize_db(values).into_iter().map(|v| v.max(-bound)).collect()
}

/// Cost and its gradient with respect to the launch profile.
pub fn cost_and_gradient(link: &LinkConfig, input: &[f64], cfg: &OptimizationConfig) -> Result<(f64, Vec<f64>)> {
    let target = cfg.target.as_ref().map(|t| t.to_dbm()).transpose()?;
    let mut tape = Tape::new();
    let x = tape.input(input.to_vec());
    let y = predict_output_tape(&mut tape, link, x)?;
    let c = cost_tape(&mut tape, y, cfg.cost, target.as_ref().map(|t| t.values()), cfg.softmin_tau);
    let grads = tape.backward(c)?;
    Ok((tape.scalar(c), grads.wrt(x).to_vec()))
}

/// Applies a moving average twice, padding with the edge samples mirrored
/// (`b a | a b c`). With that padding the averaging matrix `S` is symmetric
/// and keeps constants, so `d = S S g` satisfies `gᵀd = |S g|² ≥ 0` and
/// `−d` is a descent direction that suppresses channel-to-channel noise in
/// the surrogate's gradient.
pub fn smooth_gradient(g: &[f64], len: usize) -> Vec<f64> {
    if len <= 1 || g.is_empty() {
        return g.to_vec();
    }
    let n = g.len() as isize;
    let half = (len / 2) as isize;
    let mirror = |mut j: isize| loop {
        if j < 0 {
            j = -j - 1;
        } else if j >= n {
            j = 2 * n - 1 - j;
        } else {
            return j as usize;
        }
    };
    let pass = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (i - half..=i + half).map(|j| v[mirror(j)]).sum::<f64>() / len as f64)
            .collect()
    };
    pass(&pass(g))
}

/// Optimizes from a flat start (plus jittered starts when `restarts > 1`)
/// and keeps the lowest final cost.
pub fn optimize_input(link: &LinkConfig, cfg: &OptimizationConfig) -> Result<OptimizationResult> {
    cfg.validate()?;
    let n = link.grid.n_channels();
    let runs: Vec<Result<OptimizationResult>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 {
                vec![0.0; n]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, r as u64));
                (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
            };
            optimize_from(link, &start, cfg)
        })
        .collect();
    let mut best: Option<OptimizationResult> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.final_cost() < b.final_cost()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Projected descent along the smoothed gradient, scaled so the channel
/// that moves most moves by the current step size. A step that raises the
/// cost is rejected and the step size halved.
pub fn optimize_from(link: &LinkConfig, start: &[f64], cfg: &OptimizationConfig) -> Result<OptimizationResult> {
    cfg.validate()?;
    if start.len() != link.grid.n_channels() {
        return Err(Error::invalid("start profile has the wrong number of channels"));
    }
    let mut x = project(start, cfg.excursion_bound);
    let (mut cost, mut grad) = cost_and_gradient(link, &x, cfg)?;
    check(cost, &grad, 0)?;
    let mut trace = vec![cost];
    let mut step = cfg.step_size_db;
    let mut converged = cost <= 0.0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let d = smooth_gradient(&grad, cfg.gradient_smoothing);
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            trace.push(cost);
            converged = true;
            break;
        }
        let candidate: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi - step * di / scale).collect();
        let candidate = project(&candidate, cfg.excursion_bound);
        let (c, g) = cost_and_gradient(link, &candidate, cfg)?;
        check(c, &g, iterations)?;
        if c <= cost {
            x = candidate;
            cost = c;
            grad = g;
        } else {
            step *= 0.5;
        }
        trace.push(cost);
        if cost <= 0.0 {
            converged = true;
        } else if trace.len() > cfg.stall_window {
            let past = trace[trace.len() - 1 - cfg.stall_window];
            converged = past - cost < cfg.stall_tol;
        }
    }
    let input = PowerProfile::new(link.grid, x, crate::grid::PowerUnit::Dbm)?;
    let output = predict_output(link, &input)?;
    Ok(OptimizationResult {
        input,
        trace,
        output,
        converged,
        iterations,
    })
}

fn check(cost: f64, grad: &[f64], iteration: usize) -> Result<()> {
    if !cost.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite cost or gradient at iteration {iteration} (cost {cost})"
        )));
    }
    Ok(())
}

/// Negated normalized response to a flat input, clamped to the bound.
pub fn naive_invert(link: &LinkConfig, excursion_bound: f64) -> Result<PowerProfile> {
    let flat = PowerProfile::flat(link.grid, 0.0);
    let r = normalize_db(predict_output(link, &flat)?.values());
    let neg: Vec<f64> = r.iter().map(|v| -v).collect();
    PowerProfile::from_dbm(project(&neg, excursion_bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baselines {
    pub srs_opt: PowerProfile,
    pub bl_opt: PowerProfile,
    pub flat: PowerProfile,
    pub naive: PowerProfile,
}

impl Baselines {
    pub fn named(&self) -> [(&'static str, &PowerProfile); 4] {
        [
            ("SRSopt", &self.srs_opt),
            ("BLopt", &self.bl_opt),
            ("naive", &self.naive),
            ("flat", &self.flat),
        ]
    }
}

/// The four reference launch profiles. `link_bulk` must differ from
/// `link_srs` only in its fiber model.
pub fn optimize_baselines(link_srs: &LinkConfig, link_bulk: &LinkConfig, cfg: &OptimizationConfig) -> Result<Baselines> {
    if !link_srs.same_topology(link_bulk) {
        return Err(Error::invalid("baseline links do not share the same topology"));
    }
    let (srs, bulk) = rayon::join(|| optimize_input(link_srs, cfg), || optimize_input(link_bulk, cfg));
    Ok(Baselines {
        srs_opt: srs?.input,
        bl_opt: bulk?.input,
        flat: PowerProfile::flat(link_srs.grid, 0.0),
        naive: naive_invert(link_srs, cfg.excursion_bound)?,
    })
}

/// Excursion of a profile's dB values.
pub fn excursion_of(p: &PowerProfile) -> Result<f64> {
    Ok(excursion(p.to_dbm()?.values()))
}
