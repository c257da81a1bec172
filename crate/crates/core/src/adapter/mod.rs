//! Residual bottleneck adapter `g(z) = z + f(z)` with
//! `f(z) = W₂ᵀ · drop(GELU(LayerNorm(W₁ᵀ z + b₁))) + b₂`.
//!
//! Hidden width defaults to `⌊d/4⌋`. GELU uses the tanh approximation
//! `½u(1 + tanh(√(2/π)(u + 0.044715u³)))`. The output layer starts at zero,
//! so a fresh adapter is exactly the identity. Gradients and Jacobians are
//! written out by hand.

mod io;
mod losses;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Matrix, Rng};
use crate::metrics::{EmbeddingSet, MetricError};

pub use io::{decode_adapter, encode_adapter, read_adapter, write_adapter, ADAPTER_MAGIC, ADAPTER_VERSION};
pub use losses::{
    native_loss_and_grad, sinkhorn_native_loss, triplet_loss, triplet_loss_and_grad, TripletBatch,
};
pub use train::{
    train_adapter, ProbeKind, ProbeSource, TrainConfig, TrainLoss, TrainOutcome,
};

/// Variance floor inside LayerNorm.
pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid adapter configuration: {0}")]
    InvalidConfig(String),
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error("adapter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AdapterError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    /// `d × h`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub norm_gain: Vec<f64>,
    pub norm_bias: Vec<f64>,
    /// `h × d`
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub dropout_rate: f64,
}

pub const DEFAULT_DROPOUT: f64 = 0.1;

impl AdapterParams {
    /// Identity adapter with hidden width `⌊d/4⌋` and `W₁ ~ N(0, 1/d)`.
    pub fn new(d: usize, rng: &mut Rng) -> Result<Self> {
        Self::with_hidden(d, d / 4, rng)
    }

    pub fn with_hidden(d: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if d == 0 || hidden == 0 {
            return Err(AdapterError::InvalidConfig(format!(
                "need d ≥ 1 and hidden ≥ 1, got d={d}, hidden={hidden}"
            )));
        }
        let scale = 1.0 / (d as f64).sqrt();
        Ok(Self {
            w1: Matrix::from_fn(d, hidden, |_, _| rng.normal() * scale),
            b1: vec![0.0; hidden],
            norm_gain: vec![1.0; hidden],
            norm_bias: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, d),
            b2: vec![0.0; d],
            dropout_rate: DEFAULT_DROPOUT,
        })
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AdapterError::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.dim(), self.hidden());
        let shapes = [
            (self.b1.len(), h),
            (self.norm_gain.len(), h),
            (self.norm_bias.len(), h),
            (self.w2.rows(), h),
            (self.w2.cols(), d),
            (self.b2.len(), d),
        ];
        for (found, expected) in shapes {
            if found != expected {
                return Err(AdapterError::DimensionMismatch { expected, found });
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(AdapterError::InvalidConfig(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (d, h) = (self.dim(), self.hidden());
        2 * d * h + 3 * h + d
    }

    /// All trainable values in the order w1, b1, gain, bias, w2, b2.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.norm_gain);
        v.extend_from_slice(&self.norm_bias);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(AdapterError::DimensionMismatch {
                expected: self.num_params(),
                found: values.len(),
            });
        }
        let mut rest = values;
        for block in self.blocks_mut() {
            let (head, tail) = rest.split_at(block.len());
            block.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            &mut self.norm_gain,
            &mut self.norm_bias,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    /// `θ ← θ − lr · grad`
    pub fn sgd_step(&mut self, grads: &AdapterGrads, lr: f64) {
        let flat = grads.flatten();
        let mut offset = 0;
        for block in self.blocks_mut() {
            for (p, g) in block.iter_mut().zip(&flat[offset..]) {
                *p -= lr * g;
            }
            offset += block.len();
        }
    }

    /// Inference-mode `g(z)`.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(z, None)?.out)
    }

    /// `g(z)` with inverted dropout when `training` is set.
    pub fn adapter_forward(&self, z: &[f64], training: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        let mask = training.then(|| self.draw_mask(rng));
        Ok(self.forward(z, mask.as_deref())?.out)
    }

    /// Applies `g` to every row in inference mode, keeping labels.
    pub fn apply_set(&self, e: &EmbeddingSet) -> Result<EmbeddingSet> {
        self.check_dim(e.dim())?;
        let d = self.dim();
        let mut out = Matrix::zeros(e.len(), d);
        for i in 0..e.len() {
            let g = self.forward(e.row(i), None)?.out;
            out.row_mut(i).copy_from_slice(&g);
        }
        Ok(e.map_points(out)?)
    }

    /// Dropout multipliers: 0 with probability `p`, else `1/(1−p)`.
    pub fn draw_mask(&self, rng: &mut Rng) -> Vec<f64> {
        let p = self.dropout_rate;
        let keep = 1.0 / (1.0 - p);
        (0..self.hidden())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect()
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(AdapterError::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate. `mask` multiplies the hidden
    /// activation; `None` is inference.
    pub fn forward(&self, z: &[f64], mask: Option<&[f64]>) -> Result<ForwardCache> {
        self.check_dim(z.len())?;
        let h = self.hidden();
        let mut pre = self.w1.tr_mul_vec(z)?;
        for (a, b) in pre.iter_mut().zip(&self.b1) {
            *a += b;
        }
        let mean = pre.iter().sum::<f64>() / h as f64;
        let var = pre.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / h as f64;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let normed: Vec<f64> = pre.iter().map(|a| (a - mean) * inv_std).collect();
        let ln: Vec<f64> = normed
            .iter()
            .zip(&self.norm_gain)
            .zip(&self.norm_bias)
            .map(|((x, g), b)| g * x + b)
            .collect();
        let act: Vec<f64> = ln.iter().map(|&u| gelu(u)).collect();
        let mask = match mask {
            Some(m) if m.len() != h => {
                return Err(AdapterError::DimensionMismatch {
                    expected: h,
                    found: m.len(),
                })
            }
            Some(m) => m.to_vec(),
            None => vec![1.0; h],
        };
        let dropped: Vec<f64> = act.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let mut out = self.w2.tr_mul_vec(&dropped)?;
        for ((o, &zi), b) in out.iter_mut().zip(z).zip(&self.b2) {
            *o += zi + b;
        }
        Ok(ForwardCache {
            z: z.to_vec(),
            inv_std,
            normed,
            ln,
            mask,
            dropped,
            out,
        })
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂g(z)` and returns `∂L/∂z`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grads: &mut AdapterGrads) -> Vec<f64> {
        let h = self.hidden();
        for (gb, g) in grads.b2.iter_mut().zip(grad_out) {
            *gb += g;
        }
        for k in 0..h {
            let hk = cache.dropped[k];
            if hk != 0.0 {
                for (gw, g) in grads.w2.row_mut(k).iter_mut().zip(grad_out) {
                    *gw += hk * g;
                }
            }
        }
        let grad_ln = self.hidden_grad(cache, grad_out);
        for k in 0..h {
            grads.norm_gain[k] += grad_ln[k] * cache.normed[k];
            grads.norm_bias[k] += grad_ln[k];
        }
        let grad_pre = self.layer_norm_backward(cache, &grad_ln);
        for (gb, g) in grads.b1.iter_mut().zip(&grad_pre) {
            *gb += g;
        }
        for (i, &zi) in cache.z.iter().enumerate() {
            if zi != 0.0 {
                for (gw, g) in grads.w1.row_mut(i).iter_mut().zip(&grad_pre) {
                    *gw += zi * g;
                }
            }
        }
        let mut grad_z = self.w1.mul_vec(&grad_pre).expect("w1 is d × h");
        for (gz, g) in grad_z.iter_mut().zip(grad_out) {
            *gz += g;
        }
        grad_z
    }

    /// `∂L/∂ln` from `∂L/∂out`, through `W₂`, the mask and GELU.
    fn hidden_grad(&self, cache: &ForwardCache, grad_out: &[f64]) -> Vec<f64> {
        let through_w2 = self.w2.mul_vec(grad_out).expect("w2 is h × d");
        through_w2
            .iter()
            .zip(&cache.mask)
            .zip(&cache.ln)
            .map(|((g, m), &u)| g * m * gelu_prime(u))
            .collect()
    }

    /// `∂L/∂pre` from `∂L/∂ln`.
    fn layer_norm_backward(&self, cache: &ForwardCache, grad_ln: &[f64]) -> Vec<f64> {
        let h = self.hidden() as f64;
        let g_hat: Vec<f64> = grad_ln.iter().zip(&self.norm_gain).map(|(g, w)| g * w).collect();
        let mean_g = g_hat.iter().sum::<f64>() / h;
        let mean_gx = g_hat.iter().zip(&cache.normed).map(|(g, x)| g * x).sum::<f64>() / h;
        g_hat
            .iter()
            .zip(&cache.normed)
            .map(|(g, x)| cache.inv_std * (g - mean_g - x * mean_gx))
            .collect()
    }

    /// Analytic Jacobian of `g` at `z` in inference mode.
    pub fn jacobian_probe(&self, z: &[f64]) -> Result<JacobianProbe> {
        let cache = self.forward(z, None)?;
        let d = self.dim();
        let mut residual = Matrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for i in 0..d {
            e.fill(0.0);
            e[i] = 1.0;
            // row i of J_f = ∂f_i/∂z = W₁ · (∂pre) for the unit output e_i
            let grad_ln = self.hidden_grad(&cache, &e);
            let grad_pre = self.layer_norm_backward(&cache, &grad_ln);
            let row = self.w1.mul_vec(&grad_pre)?;
            residual.row_mut(i).copy_from_slice(&row);
        }
        let jacobian = Matrix::identity(d).add(&residual).expect("square");
        let pullback = jacobian.transpose().matmul(&jacobian).expect("square");
        Ok(JacobianProbe {
            point: z.to_vec(),
            trace_jf: residual.trace(),
            det_estimate: jacobian.determinant().expect("square"),
            jacobian,
            pullback,
            residual_jacobian: residual,
        })
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub z: Vec<f64>,
    inv_std: f64,
    normed: Vec<f64>,
    ln: Vec<f64>,
    mask: Vec<f64>,
    dropped: Vec<f64>,
    pub out: Vec<f64>,
}

/// Gradient with the same shapes as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub norm_gain: Vec<f64>,
    pub norm_bias: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl AdapterGrads {
    pub fn zeros_like(p: &AdapterParams) -> Self {
        let (d, h) = (p.dim(), p.hidden());
        Self {
            w1: Matrix::zeros(d, h),
            b1: vec![0.0; h],
            norm_gain: vec![0.0; h],
            norm_bias: vec![0.0; h],
            w2: Matrix::zeros(h, d),
            b2: vec![0.0; d],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.norm_gain);
        v.extend_from_slice(&self.norm_bias);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn scale(&mut self, s: f64) {
        self.w1 = self.w1.scale(s);
        self.w2 = self.w2.scale(s);
        for v in [&mut self.b1, &mut self.norm_gain, &mut self.norm_bias, &mut self.b2] {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianProbe {
    pub point: Vec<f64>,
    /// `J = I + J_f`
    pub jacobian: Matrix,
    /// `M = JᵀJ`
    pub pullback: Matrix,
    pub residual_jacobian: Matrix,
    pub trace_jf: f64,
    /// `det(I + J_f)` by LU.
    pub det_estimate: f64,
}

pub fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

pub fn gelu_prime(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}
