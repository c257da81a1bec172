//! Per-sample transport costs and the scores built on them.
//!
//! Each evaluation sample `j` is charged `c_j = Σ_i T_ij C_ij` under the cross
//! plan of the Sinkhorn run; samples the reference set cannot cheaply explain
//! rise to the top of the report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    per_sample_costs, sinkhorn_divergence_with, EmbeddingSet, MetricError, SinkhornConfig,
    SinkhornParts,
};

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cost list is empty")]
    EmptyInput,
    #[error("mean clean cost is {0}, cannot form a ratio")]
    DegenerateCleanCosts(f64),
    #[error("mask has {found} entries for {expected} samples")]
    MaskLength { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub costs: Vec<f64>,
    pub sample_ids: Vec<String>,
    pub auroc: Option<f64>,
    pub separation_ratio: Option<f64>,
    /// `(id, cost)` pairs, highest cost first.
    pub top_k: Vec<(String, f64)>,
    pub total_cost: f64,
    pub divergence: f64,
    pub epsilon_reg: f64,
    /// Set when the Sinkhorn run hit its iteration cap.
    pub degraded: bool,
}

impl DiagnosticsReport {
    /// Indices of all samples, highest cost first; ties keep index order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.costs.len()).collect();
        idx.sort_by(|&a, &b| self.costs[b].total_cmp(&self.costs[a]).then(a.cmp(&b)));
        idx
    }

    /// Fills `auroc` and `separation_ratio` from a known contamination mask.
    pub fn score_against(&mut self, contaminated: &[bool]) -> Result<()> {
        if contaminated.len() != self.costs.len() {
            return Err(DiagnosticsError::MaskLength {
                expected: self.costs.len(),
                found: contaminated.len(),
            });
        }
        let (bad, clean) = split_by_mask(&self.costs, contaminated);
        self.auroc = Some(auroc(&clean, &bad)?);
        self.separation_ratio = Some(separation_ratio(&clean, &bad)?);
        Ok(())
    }
}

/// `(contaminated, clean)` costs.
pub fn split_by_mask(costs: &[f64], contaminated: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut bad = Vec::new();
    let mut clean = Vec::new();
    for (&c, &m) in costs.iter().zip(contaminated) {
        if m {
            bad.push(c);
        } else {
            clean.push(c);
        }
    }
    (bad, clean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    pub sinkhorn: SinkhornConfig,
    pub top_k: usize,
}

impl DiagnoseConfig {
    pub fn new(eps_reg: f64) -> Self {
        Self {
            sinkhorn: SinkhornConfig::new(eps_reg),
            top_k: DEFAULT_TOP_K,
        }
    }
}

pub fn diagnose(reference: &EmbeddingSet, eval: &EmbeddingSet, eps_reg: f64) -> Result<DiagnosticsReport> {
    diagnose_with(reference, eval, &DiagnoseConfig::new(eps_reg))
}

pub fn diagnose_with(
    reference: &EmbeddingSet,
    eval: &EmbeddingSet,
    cfg: &DiagnoseConfig,
) -> Result<DiagnosticsReport> {
    let result = sinkhorn_divergence_with(reference, eval, &cfg.sinkhorn)?;
    let cost = crate::linalg::pairwise_sq_dists(reference.points(), eval.points())
        .map_err(MetricError::from)?;
    let costs = per_sample_costs(&result.plan_xy, &cost)?;
    let sample_ids: Vec<String> = (0..costs.len()).map(|j| j.to_string()).collect();
    let mut report = DiagnosticsReport {
        total_cost: result.plan_xy.total_cost,
        costs,
        sample_ids,
        auroc: None,
        separation_ratio: None,
        top_k: Vec::new(),
        divergence: result.divergence,
        epsilon_reg: result.epsilon_reg,
        degraded: !result.converged,
    };
    report.top_k = report
        .ranking()
        .into_iter()
        .take(cfg.top_k)
        .map(|j| (report.sample_ids[j].clone(), report.costs[j]))
        .collect();
    Ok(report)
}

/// Per-sample costs from an already solved divergence, for callers that hold
/// the three entropic problems anyway.
pub fn costs_from_parts(parts: &SinkhornParts) -> Vec<f64> {
    let plan = parts.plan_xy();
    per_sample_costs(&plan, &parts.cost_xy).expect("plan and cost share a shape")
}

/// Probability that a contaminated cost beats a clean one, ties counting ½,
/// from the Mann–Whitney rank sum with average ranks.
pub fn auroc(clean: &[f64], contaminated: &[f64]) -> Result<f64> {
    if clean.is_empty() || contaminated.is_empty() {
        return Err(DiagnosticsError::EmptyInput);
    }
    let mut all: Vec<(f64, bool)> = clean
        .iter()
        .map(|&c| (c, false))
        .chain(contaminated.iter().map(|&c| (c, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (nc, nb) = (clean.len() as f64, contaminated.len() as f64);
    let u = rank_sum - nb * (nb + 1.0) / 2.0;
    Ok(u / (nc * nb))
}

/// Mean contaminated cost over mean clean cost.
pub fn separation_ratio(clean: &[f64], contaminated: &[f64]) -> Result<f64> {
    if clean.is_empty() || contaminated.is_empty() {
        return Err(DiagnosticsError::EmptyInput);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let clean_mean = mean(clean);
    if clean_mean <= 0.0 {
        return Err(DiagnosticsError::DegenerateCleanCosts(clean_mean));
    }
    Ok(mean(contaminated) / clean_mean)
}
