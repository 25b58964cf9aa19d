use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EdfaMlp, GainDataset, INPUT_DIM};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::grid::N_CHANNELS;
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied on a validation plateau.
    pub lr_decay: f64,
    pub plateau_patience: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            plateau_patience: 5,
            max_epochs: 200,
            early_stop_patience: 20,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("`batch_size` must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("`learning_rate` must be positive, got {}", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("`lr_decay` must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("`max_epochs` must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, t: i32) {
        let c1 = 1.0 - Self::B1.powi(t);
        let c2 = 1.0 - Self::B2.powi(t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn design_matrix(model: &EdfaMlp, ds: &GainDataset) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(ds.len() * INPUT_DIM);
    let mut y = Vec::with_capacity(ds.len() * N_CHANNELS);
    for s in &ds.samples {
        x.extend(model.input_vector(&s.features));
        y.extend_from_slice(&s.target);
    }
    (x, y)
}

/// Mean squared gain error over all samples and channels, dB².
pub fn dataset_mse(model: &EdfaMlp, ds: &GainDataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let (x, y) = design_matrix(model, ds);
    let pred = model.forward_batch(&x);
    pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

pub fn train_edfa_model(train: &GainDataset, val: &GainDataset, cfg: &TrainingConfig) -> Result<(EdfaMlp, TrainingReport)> {
    train_edfa_model_with(train, val, cfg, |_| {})
}

/// Mini-batch Adam on the MSE loss. Keeps the parameters of the epoch with
/// the lowest validation MSE (training MSE when `val` is empty).
pub fn train_edfa_model_with(
    train: &GainDataset,
    val: &GainDataset,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(EdfaMlp, TrainingReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut model = EdfaMlp::xavier(cfg.seed);
    let (x, y) = design_matrix(&model, train);
    let n = train.len();

    // Start the output layer at the average target.
    let mut mean_target = vec![0.0; N_CHANNELS];
    for row in y.chunks(N_CHANNELS) {
        for (m, t) in mean_target.iter_mut().zip(row) {
            *m += t / n as f64;
        }
    }
    model.layers[2].bias = mean_target;

    let dims: Vec<(usize, usize)> = model.layers.iter().map(|l| (l.in_dim(), l.out_dim())).collect();
    let mut adam: Vec<(Adam, Adam)> = dims
        .iter()
        .map(|&(i, o)| (Adam::new(i * o), Adam::new(o)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = cfg.learning_rate;
    let mut t = 0;
    let mut best = (model.clone(), f64::INFINITY, 0);
    let mut stale = 0;
    let mut plateau = 0;
    let mut history = Vec::new();
    let mut xb = Vec::with_capacity(cfg.batch_size * INPUT_DIM);
    let mut yb = Vec::with_capacity(cfg.batch_size * N_CHANNELS);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&x[i * INPUT_DIM..(i + 1) * INPUT_DIM]);
                yb.extend_from_slice(&y[i * N_CHANNELS..(i + 1) * N_CHANNELS]);
            }
            let mut tape = Tape::new();
            let params: Vec<_> = model
                .layers
                .iter()
                .map(|l| (tape.input(l.weights.data().to_vec()), tape.input(l.bias.clone())))
                .collect();
            let mut h = tape.constant(xb.clone());
            for (li, &(w, b)) in params.iter().enumerate() {
                h = tape.linear(w, b, h, dims[li].0, dims[li].1);
                if li + 1 < params.len() {
                    h = tape.relu(h);
                }
            }
            let target = tape.constant(yb.clone());
            let diff = tape.sub(h, target);
            let sq = tape.powi(diff, 2);
            let loss = tape.mean(sq);
            let lv = tape.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::Numerical(format!(
                    "training loss became non-finite at epoch {epoch}, batch {bi} (learning rate {lr} may be too high)"
                )));
            }
            let grads = tape.backward(loss).map_err(|e| {
                Error::Numerical(format!("training diverged at epoch {epoch}, batch {bi}: {e}"))
            })?;
            loss_sum += lv * chunk.len() as f64;
            t += 1;
            for (li, layer) in model.layers.iter_mut().enumerate() {
                let (w, b) = params[li];
                let (in_dim, out_dim) = dims[li];
                let mut wdata = layer.weights.data().to_vec();
                adam[li].0.step(&mut wdata, grads.wrt(w), lr, t);
                layer.weights = Arc::new(Matrix::from_row_major(out_dim, in_dim, wdata));
                adam[li].1.step(&mut layer.bias, grads.wrt(b), lr, t);
            }
        }
        let train_mse = loss_sum / n as f64;
        let val_mse = if val.is_empty() { dataset_mse(&model, train) } else { dataset_mse(&model, val) };
        if !val_mse.is_finite() {
            return Err(Error::Numerical(format!(
                "validation error became non-finite at epoch {epoch} (learning rate {lr} may be too high)"
            )));
        }
        let stats = EpochStats {
            epoch,
            train_mse,
            val_mse,
            learning_rate: lr,
        };
        on_epoch(&stats);
        history.push(stats);

        if val_mse < best.1 {
            best = (model.clone(), val_mse, epoch);
            stale = 0;
            plateau = 0;
        } else {
            stale += 1;
            plateau += 1;
            if plateau >= cfg.plateau_patience {
                lr *= cfg.lr_decay;
                plateau = 0;
            }
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let (mut model, best_val_mse, best_epoch) = best;
    model.seed = cfg.seed;
    Ok((
        model,
        TrainingReport {
            best_epoch,
            best_val_mse,
            history,
        },
    ))
}
