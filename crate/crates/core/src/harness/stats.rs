use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::metrics::{sinkhorn_divergence_with, EmbeddingSet, SinkhornConfig};

pub const SWEEP_GRID: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps_reg: f64,
    pub divergence: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn eps_sweep(reference: &EmbeddingSet, test: &EmbeddingSet, eps_grid: &[f64]) -> Result<Vec<SweepRow>> {
    if let Some(&bad) = eps_grid.iter().find(|e| !(**e > 0.0)) {
        return Err(HarnessError::InvalidParameter(format!("ε_reg {bad} is not positive")));
    }
    eps_grid
        .par_iter()
        .map(|&eps| {
            let r = sinkhorn_divergence_with(reference, test, &SinkhornConfig::new(eps))?;
            Ok(SweepRow {
                eps_reg: eps,
                divergence: r.divergence,
                iterations: r.iterations,
                converged: r.converged,
            })
        })
        .collect()
}

/// 1-based ranks, ties sharing their average.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(HarnessError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(HarnessError::DegenerateInput);
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(HarnessError::DegenerateInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
