use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, MetricError, Result};
use crate::linalg::{spd_sqrt, LinalgError, Matrix, SYMMETRY_TOL};

/// FAD values in `[−FAD_NEGATIVE_TOL · scale, 0)` are round-off and clamp to
/// zero, where `scale = max(1, tr Σ_a + tr Σ_b)`.
pub const FAD_NEGATIVE_TOL: f64 = 1e-8;

/// Mean and covariance of a Gaussian fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl GaussianMoments {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        if !cov.is_square() {
            return Err(LinalgError::NotSquare {
                rows: cov.rows(),
                cols: cov.cols(),
            }
            .into());
        }
        if cov.rows() != mean.len() {
            return Err(MetricError::DimensionMismatch {
                left: mean.len(),
                right: cov.rows(),
            });
        }
        let asym = cov.asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(LinalgError::NotSymmetric { max_asymmetry: asym }.into());
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and the unbiased (divisor `n − 1`) covariance.
pub fn fit_moments(e: &EmbeddingSet) -> Result<GaussianMoments> {
    let n = e.len();
    if n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, found: n });
    }
    Ok(moments_with_divisor(e, (n - 1) as f64))
}

/// Moments of the empirical measure itself: covariance with divisor `n`.
pub fn fit_population_moments(e: &EmbeddingSet) -> GaussianMoments {
    moments_with_divisor(e, e.len() as f64)
}

fn moments_with_divisor(e: &EmbeddingSet, divisor: f64) -> GaussianMoments {
    let n = e.len();
    let d = e.dim();
    let points = e.points();
    let mean: Vec<f64> = points.col_sums().into_iter().map(|s| s / n as f64).collect();
    let mut cov = Matrix::zeros(d, d);
    let mut centred = vec![0.0; d];
    for row in points.row_iter() {
        for ((c, &x), &m) in centred.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centred[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += ci * centred[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / divisor;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    GaussianMoments { mean, cov }
}

/// Squared Bures–Wasserstein distance between two Gaussians:
/// `‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2 (Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})`.
pub fn fad(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let sa = spd_sqrt(&a.cov)?;
    let inner = sa.matmul(&b.cov)?.matmul(&sa)?.symmetrized();
    let cross = spd_sqrt(&inner)?.trace();
    let trace_sum = a.cov.trace() + b.cov.trace();
    let value = mean_term + trace_sum - 2.0 * cross;
    if value < 0.0 {
        if value < -FAD_NEGATIVE_TOL * trace_sum.max(1.0) {
            return Err(MetricError::NegativeDistance(value));
        }
        return Ok(0.0);
    }
    Ok(value)
}
