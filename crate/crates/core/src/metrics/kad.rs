//! Unbiased MMD² with a Gaussian RBF kernel `k(a, b) = exp(−‖a − b‖² / 2σ²)`.
//!
//! For equal set sizes the estimator pairs `x_i` with `y_i` and averages the
//! U-statistic kernel `k(x_i,x_j) + k(y_i,y_j) − k(x_i,y_j) − k(x_j,y_i)` over
//! `i ≠ j`, so identical inputs give exactly zero. Unequal sizes use the
//! two-sample form with the full cross sum. Either way the value can dip
//! slightly below zero and is returned as is.

use serde::{Deserialize, Serialize};

use super::{check_same_dim, EmbeddingSet, MetricError, Result};
use crate::linalg::{pairwise_sq_dists, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BandwidthRule {
    /// Median pairwise distance within the evaluation set.
    EvalMedian,
    /// Median pairwise distance within the union of both sets.
    PooledMedian,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KadConfig {
    pub bandwidth_rule: BandwidthRule,
}

impl Default for KadConfig {
    fn default() -> Self {
        Self {
            bandwidth_rule: BandwidthRule::EvalMedian,
        }
    }
}

impl KadConfig {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            bandwidth_rule: BandwidthRule::Fixed(sigma),
        }
    }
}

pub fn kad(x_ref: &EmbeddingSet, y_eval: &EmbeddingSet, cfg: &KadConfig) -> Result<f64> {
    let sigma = resolve_bandwidth(x_ref, y_eval, cfg.bandwidth_rule)?;
    mmd2_unbiased(x_ref, y_eval, sigma)
}

/// The σ a rule selects for this pair of sets.
pub fn resolve_bandwidth(x_ref: &EmbeddingSet, y_eval: &EmbeddingSet, rule: BandwidthRule) -> Result<f64> {
    check_same_dim(x_ref, y_eval)?;
    let sigma = match rule {
        BandwidthRule::Fixed(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(MetricError::InvalidBandwidth(s));
            }
            return Ok(s);
        }
        BandwidthRule::EvalMedian => median_pairwise_distance(y_eval.points()),
        BandwidthRule::PooledMedian => {
            let mut pooled = x_ref.points().as_slice().to_vec();
            pooled.extend_from_slice(y_eval.points().as_slice());
            let rows = x_ref.len() + y_eval.len();
            median_pairwise_distance(&Matrix::from_vec(rows, x_ref.dim(), pooled)?)
        }
    };
    match sigma {
        Some(s) if s > 0.0 => Ok(s),
        _ => Err(MetricError::DegenerateBandwidth),
    }
}

/// Median of `‖p_i − p_j‖` over `i < j`; the mean of the two middle values
/// when the pair count is even.
fn median_pairwise_distance(points: &Matrix) -> Option<f64> {
    let n = points.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(crate::linalg::sq_dist(points.row(i), points.row(j)));
        }
    }
    if d.is_empty() {
        return None;
    }
    let even = d.len() % 2 == 0;
    let mid = d.len() / 2;
    let (lower, upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = upper.sqrt();
    if even {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max).sqrt();
        return Some(0.5 * (below + upper));
    }
    Some(upper)
}

pub fn mmd2_unbiased(x: &EmbeddingSet, y: &EmbeddingSet, sigma: f64) -> Result<f64> {
    check_same_dim(x, y)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MetricError::InvalidBandwidth(sigma));
    }
    let (n, m) = (x.len(), y.len());
    if n < 2 || m < 2 {
        return Err(MetricError::TooFewSamples {
            needed: 2,
            found: n.min(m),
        });
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let kernel_sums = |a: &Matrix, b: &Matrix| -> Result<(f64, f64)> {
        let d2 = pairwise_sq_dists(a, b)?;
        let mut total = 0.0;
        let mut diag = 0.0;
        for (i, row) in d2.row_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let k = (-gamma * v).exp();
                total += k;
                if i == j {
                    diag += k;
                }
            }
        }
        Ok((total, diag))
    };
    let (kxx, kxx_diag) = kernel_sums(x.points(), x.points())?;
    let (kyy, kyy_diag) = kernel_sums(y.points(), y.points())?;
    let (kxy, kxy_diag) = kernel_sums(x.points(), y.points())?;
    let within_x = (kxx - kxx_diag) / (n * (n - 1)) as f64;
    let within_y = (kyy - kyy_diag) / (m * (m - 1)) as f64;
    let cross = if n == m {
        2.0 * (kxy - kxy_diag) / (n * (n - 1)) as f64
    } else {
        2.0 * kxy / (n * m) as f64
    };
    Ok(within_x + within_y - cross)
}
