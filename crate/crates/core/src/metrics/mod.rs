//! Distribution distances between embedding sets.
//!
//! | Function | Distance | Notes |
//! |----------|----------|-------|
//! | [`fad`] | Bures–Wasserstein between Gaussian fits | closed form, needs `n ≥ 2` |
//! | [`kad`] | unbiased RBF-kernel MMD² | median-heuristic bandwidth |
//! | [`sinkhorn_divergence`] | debiased entropic OT | log-domain, relative ε by default |
//! | [`exact_ot`] | discrete W₂² or W₁ | assignment or network simplex |

mod exact;
mod kad;
mod moments;
mod sinkhorn;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};

pub use exact::{exact_ot, exact_ot_with_cost, network_simplex, solve_assignment, CostPower};
pub use kad::{kad, mmd2_unbiased, resolve_bandwidth, BandwidthRule, KadConfig};
pub use moments::{fad, fit_moments, fit_population_moments, GaussianMoments, FAD_NEGATIVE_TOL};
pub use sinkhorn::{
    entropic_ot, entropic_ot_symmetric, sinkhorn_divergence, sinkhorn_divergence_with, EntropicSolution, EpsilonScaling,
    SinkhornConfig, SinkhornParts, SinkhornResult,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("regularisation must be positive and finite, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("kernel bandwidth is degenerate (median pairwise distance is 0)")]
    DegenerateBandwidth,
    #[error("fixed kernel bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("Bures-Wasserstein value {0:e} is negative beyond round-off")]
    NegativeDistance(f64),
    #[error("exact transport solver failed: {0}")]
    SolverFailure(String),
    #[error("embedding set is invalid: {0}")]
    InvalidEmbeddings(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// An `n × d` set of embedding vectors, optionally labelled per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    points: Matrix,
    labels: Option<Vec<u32>>,
    source_id: Option<String>,
}

impl EmbeddingSet {
    pub fn new(points: Matrix) -> Result<Self> {
        if points.rows() == 0 {
            return Err(MetricError::InvalidEmbeddings("set is empty".into()));
        }
        if !points.is_finite() {
            return Err(MetricError::InvalidEmbeddings("non-finite entry".into()));
        }
        Ok(Self {
            points,
            labels: None,
            source_id: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(MetricError::InvalidEmbeddings(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn into_points(self) -> Matrix {
        self.points
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn source_id(&self) -> Option<&str> {
        self.source_id.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    /// Same labels and id, new coordinates. `points` must keep the row count.
    pub fn map_points(&self, points: Matrix) -> Result<Self> {
        let mut out = Self::new(points)?;
        if out.len() != self.len() {
            return Err(MetricError::DimensionMismatch {
                left: self.len(),
                right: out.len(),
            });
        }
        out.labels = self.labels.clone();
        out.source_id = self.source_id.clone();
        Ok(out)
    }
}

pub(crate) fn check_same_dim(x: &EmbeddingSet, y: &EmbeddingSet) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(MetricError::DimensionMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    Ok(())
}

/// A coupling between two uniform point clouds together with its cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub weights: Matrix,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    pub total_cost: f64,
}

impl TransportPlan {
    /// Largest absolute deviation of the plan's row and column sums from the
    /// prescribed marginals.
    pub fn marginal_violation(&self) -> f64 {
        let rows = self.weights.row_sums();
        let cols = self.weights.col_sums();
        rows.iter()
            .zip(&self.row_marginal)
            .chain(cols.iter().zip(&self.col_marginal))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Per-column transport cost `c_j = Σ_i T_ij · cost_ij`.
pub fn per_sample_costs(plan: &TransportPlan, cost: &Matrix) -> Result<Vec<f64>> {
    let w = &plan.weights;
    if w.rows() != cost.rows() || w.cols() != cost.cols() {
        return Err(MetricError::DimensionMismatch {
            left: w.rows() * w.cols(),
            right: cost.rows() * cost.cols(),
        });
    }
    let mut c = vec![0.0; w.cols()];
    for (wr, cr) in w.row_iter().zip(cost.row_iter()) {
        for ((cj, &t), &k) in c.iter_mut().zip(wr).zip(cr) {
            *cj += t * k;
        }
    }
    Ok(c)
}

pub(crate) fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}
