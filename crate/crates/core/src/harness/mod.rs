//! Synthetic experiments: contamination generators, rank-1 bound checks,
//! self-normalised sensitivity, the 2×2 factorial, ε sweeps and rank
//! correlation.
//!
//! Monte Carlo cells are pure functions of `(seed, config)`. They may run in
//! parallel, but results are always reduced in index order.

mod contamination;
mod factorial;
mod spectrum;
mod stats;
mod theorem;

use thiserror::Error;

pub use contamination::{
    contaminate, rank1_responses, rank1_sensitivity, self_normalise, BasePca, ContaminationKind,
    ContaminationSpec, MetricKind, Rank1Config, Rank1Row, Rank1Table, RawResponse, RANK_ONE_AMPLITUDE,
    REFERENCE_EPSILON,
};
pub use factorial::{factorial_decomposition, log_normalise, run_factorial, Factor, FactorDecomposition};
pub use spectrum::{SpectrumKind, SpectrumSpec};
pub use stats::{average_ranks, eps_sweep, spearman, SweepRow, SWEEP_GRID};
pub use theorem::{
    check_theorem1, contaminated_moments, fad_rank1_closed_form, fad_upper_bound, theorem1_draw,
    TheoremOneConfig, TheoremOneReport, LOWER_BOUND_CONSTANT,
};

use crate::adapter::AdapterError;
use crate::linalg::LinalgError;
use crate::metrics::MetricError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("operation needs theorem-one contamination")]
    WrongKind,
    #[error("ε = {epsilon} contaminates no rows of {n}")]
    EpsilonTooSmall { epsilon: f64, n: usize },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("all values are zero")]
    AllZero,
    #[error("value {0} is negative or not finite")]
    NegativeValue(f64),
    #[error("input is constant or too short")]
    DegenerateInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// `⌈ε·n⌉`, treating products within 1e-9 of an integer as that integer so
/// `0.05 · 1000` counts 50 rows, not 51. Fails when nothing would be replaced.
pub fn contaminated_count(epsilon: f64, n: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(HarnessError::InvalidParameter(format!("epsilon {epsilon} outside [0,1)")));
    }
    let x = epsilon * n as f64;
    let k = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() } as usize;
    if k == 0 {
        return Err(HarnessError::EpsilonTooSmall { epsilon, n });
    }
    Ok(k.min(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_round_up() {
        assert_eq!(contaminated_count(0.05, 1000).unwrap(), 50);
        assert_eq!(contaminated_count(0.1, 500).unwrap(), 50);
        assert_eq!(contaminated_count(0.05, 30).unwrap(), 2);
        assert_eq!(contaminated_count(0.005, 100).unwrap(), 1);
        assert_eq!(contaminated_count(0.001, 100).unwrap(), 1);
        assert!(matches!(contaminated_count(0.0, 100), Err(HarnessError::EpsilonTooSmall { .. })));
        assert!(contaminated_count(1.5, 100).is_err());
    }
}
