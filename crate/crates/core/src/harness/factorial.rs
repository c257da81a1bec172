//! 2×2 decomposition over cost (raw vs adapted embeddings) and coupling
//! (Gaussian vs Sinkhorn):
//!
//! | | Gaussian | Sinkhorn |
//! |---|---|---|
//! | raw | A | B |
//! | adapted | C | D |

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::adapter::AdapterParams;
use crate::metrics::{fad, fit_moments, sinkhorn_divergence_with, EmbeddingSet, SinkhornConfig};

/// `log(1+x) / log(1+x_max)`.
pub fn log_normalise(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(HarnessError::NegativeValue(bad));
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(HarnessError::AllZero);
    }
    let denom = max.ln_1p();
    Ok(values.iter().map(|v| v.ln_1p() / denom).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Factor {
    Cost,
    Meas,
    Syn,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cost => "cost",
            Self::Meas => "meas",
            Self::Syn => "syn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorDecomposition {
    pub a_raw: f64,
    pub b_raw: f64,
    pub c_raw: f64,
    pub d_raw: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub c_n: f64,
    pub d_n: f64,
    pub delta_cost: f64,
    pub delta_meas: f64,
    pub delta_syn: f64,
    pub dominant: Factor,
}

/// Decomposes already normalised conditions; the raw fields are set equal to
/// the inputs.
pub fn factorial_decomposition(a: f64, b: f64, c: f64, d: f64) -> FactorDecomposition {
    let delta_cost = (c + d) / 2.0 - (a + b) / 2.0;
    let delta_meas = (b + d) / 2.0 - (a + c) / 2.0;
    let delta_syn = d - c - b + a;
    // ties resolve Cost, then Syn, then Meas
    let mut dominant = Factor::Cost;
    let mut best = delta_cost.abs();
    for (f, v) in [(Factor::Syn, delta_syn), (Factor::Meas, delta_meas)] {
        if v.abs() > best {
            dominant = f;
            best = v.abs();
        }
    }
    FactorDecomposition {
        a_raw: a,
        b_raw: b,
        c_raw: c,
        d_raw: d,
        a_n: a,
        b_n: b,
        c_n: c,
        d_n: d,
        delta_cost,
        delta_meas,
        delta_syn,
        dominant,
    }
}

/// Normalises a metric family; an all-zero family stays zero.
fn normalise_pair(x: f64, y: f64) -> Result<(f64, f64)> {
    match log_normalise(&[x, y]) {
        Ok(v) => Ok((v[0], v[1])),
        Err(HarnessError::AllZero) => Ok((0.0, 0.0)),
        Err(e) => Err(e),
    }
}

pub fn run_factorial(
    reference: &EmbeddingSet,
    test: &EmbeddingSet,
    adapter: &AdapterParams,
    eps_reg: f64,
) -> Result<FactorDecomposition> {
    if adapter.dim() != reference.dim() || adapter.dim() != test.dim() {
        return Err(HarnessError::InvalidParameter(format!(
            "adapter dimension {} against embeddings of dimension {}",
            adapter.dim(),
            reference.dim()
        )));
    }
    let cfg = SinkhornConfig::new(eps_reg);
    let gaussian = |x: &EmbeddingSet, y: &EmbeddingSet| -> Result<f64> { Ok(fad(&fit_moments(x)?, &fit_moments(y)?)?) };
    // the divergence is nonnegative; round-off below zero is clipped
    let sinkhorn =
        |x: &EmbeddingSet, y: &EmbeddingSet| -> Result<f64> { Ok(sinkhorn_divergence_with(x, y, &cfg)?.divergence.max(0.0)) };
    let (ref_g, test_g) = (adapter.apply_set(reference)?, adapter.apply_set(test)?);
    let a = gaussian(reference, test)?;
    let b = sinkhorn(reference, test)?;
    let c = gaussian(&ref_g, &test_g)?;
    let d = sinkhorn(&ref_g, &test_g)?;
    let (a_n, c_n) = normalise_pair(a, c)?;
    let (b_n, d_n) = normalise_pair(b, d)?;
    Ok(FactorDecomposition {
        a_raw: a,
        b_raw: b,
        c_raw: c,
        d_raw: d,
        ..factorial_decomposition(a_n, b_n, c_n, d_n)
    })
}
