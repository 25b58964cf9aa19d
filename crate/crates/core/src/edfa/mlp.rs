use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EdfaFeatures;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::N_CHANNELS;
use crate::linalg::{gemm, Matrix};

pub const INPUT_DIM: usize = N_CHANNELS + 2;
/// Layer widths from input to output.
pub const LAYER_DIMS: [usize; 4] = [INPUT_DIM, 256, 128, N_CHANNELS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`, row-major.
    pub weights: Arc<Matrix>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Arc::new(Matrix::zeros(out_dim, in_dim)),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// How the two total-power features are mapped before entering the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub totals_divisor: f64,
}

impl Default for FeatureScaling {
    fn default() -> Self {
        Self { totals_divisor: 10.0 }
    }
}

/// Gain surrogate: 85 → 256 → 128 → 83 with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdfaMlp {
    pub layers: Vec<DenseLayer>,
    pub scaling: FeatureScaling,
    /// Seed of the training run that produced the weights.
    pub seed: u64,
}

impl EdfaMlp {
    pub fn zeros() -> Self {
        Self {
            layers: LAYER_DIMS.windows(2).map(|d| DenseLayer::zeros(d[0], d[1])).collect(),
            scaling: FeatureScaling::default(),
            seed: 0,
        }
    }

    /// Weights uniform in ±√(6/(fan_in+fan_out)), biases zero.
    pub fn xavier(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = LAYER_DIMS
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit));
                DenseLayer {
                    weights: Arc::new(w),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self {
            layers,
            scaling: FeatureScaling::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != LAYER_DIMS.len() - 1 {
            return Err(Error::invalid(format!(
                "model has {} layers, expected {}",
                self.layers.len(),
                LAYER_DIMS.len() - 1
            )));
        }
        for (i, (layer, d)) in self.layers.iter().zip(LAYER_DIMS.windows(2)).enumerate() {
            if layer.in_dim() != d[0] || layer.out_dim() != d[1] || layer.bias.len() != d[1] {
                return Err(Error::invalid(format!(
                    "layer {} is {}×{} with {} biases, expected {}×{}",
                    i + 1,
                    layer.out_dim(),
                    layer.in_dim(),
                    layer.bias.len(),
                    d[1],
                    d[0]
                )));
            }
            if layer.weights.data().len() != d[0] * d[1] {
                return Err(Error::invalid(format!("layer {} weight data has wrong length", i + 1)));
            }
            if !layer.weights.data().iter().chain(&layer.bias).all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("layer {} has non-finite parameters", i + 1)));
            }
        }
        if !(self.scaling.totals_divisor.is_finite() && self.scaling.totals_divisor > 0.0) {
            return Err(Error::invalid("feature scaling divisor must be positive"));
        }
        Ok(())
    }

    /// Network input vector for `feat`, scaling applied.
    pub fn input_vector(&self, feat: &EdfaFeatures) -> Vec<f64> {
        let mut x = Vec::with_capacity(INPUT_DIM);
        x.extend_from_slice(&feat.normalized_profile);
        x.push(feat.total_in / self.scaling.totals_divisor);
        x.push(feat.total_out / self.scaling.totals_divisor);
        x
    }

    /// Predicted gain in dB.
    pub fn forward(&self, feat: &EdfaFeatures) -> Vec<f64> {
        self.forward_input(&self.input_vector(feat))
    }

    /// Forward pass on an already scaled input vector.
    pub fn forward_input(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.weights.matvec(&h);
            for (v, b) in y.iter_mut().zip(&layer.bias) {
                *v += b;
                if i < last {
                    *v = v.max(0.0);
                }
            }
            h = y;
        }
        h
    }

    /// Forward pass for `xs.len() / 85` scaled inputs stored row by row.
    pub fn forward_batch(&self, xs: &[f64]) -> Vec<f64> {
        assert_eq!(xs.len() % INPUT_DIM, 0, "batch is not a multiple of the input width");
        let batch = xs.len() / INPUT_DIM;
        let last = self.layers.len() - 1;
        let mut h = xs.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
            let mut y = Vec::with_capacity(batch * out_dim);
            for _ in 0..batch {
                y.extend_from_slice(&layer.bias);
            }
            gemm(batch, in_dim, out_dim, &h, false, layer.weights.data(), true, &mut y, true);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = y;
        }
        h
    }

    /// Forward pass recorded on `tape` with the weights held constant.
    /// `x` is the scaled 85-entry input.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let wx = tape.affine(Arc::clone(&layer.weights), h);
            let b = tape.constant(layer.bias.clone());
            h = tape.add(wx, b);
            if i < last {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Product of the layer spectral norms; bounds the output change per
    /// unit change of the (scaled) input.
    pub fn lipschitz_bound(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.operator_norm(200)).product()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::invalid(format!("model file: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        m.validate().map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(m)
    }
}
