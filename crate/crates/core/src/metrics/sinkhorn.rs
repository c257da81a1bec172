//! Entropic optimal transport and the debiased Sinkhorn divergence
//!
//! `S_ε(x, y) = OT_ε(x, y) − ½ OT_ε(x, x) − ½ OT_ε(y, y)`
//!
//! with squared-Euclidean cost and uniform weights. By default the
//! regularisation is scale-free: the effective ε is `eps_reg` times the mean of
//! the cross cost matrix, and all three terms share that one value. The
//! iterations run on dual potentials in the log domain, with ε-scaling from
//! the cost diameter down to the target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_same_dim, uniform, EmbeddingSet, MetricError, Result, TransportPlan};
use crate::linalg::{pairwise_sq_dists, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpsilonScaling {
    /// Effective ε = `eps_reg × mean(cross cost)`.
    RelativeToMeanCost,
    /// Effective ε = `eps_reg`.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub eps_reg: f64,
    pub scaling: EpsilonScaling,
    pub max_iter: usize,
    /// Stop once the L∞ marginal violation drops below this.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            eps_reg: 0.05,
            scaling: EpsilonScaling::RelativeToMeanCost,
            max_iter: 2000,
            tol: 1e-6,
        }
    }
}

impl SinkhornConfig {
    pub fn new(eps_reg: f64) -> Self {
        Self {
            eps_reg,
            ..Self::default()
        }
    }

    pub fn absolute(mut self) -> Self {
        self.scaling = EpsilonScaling::Absolute;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// The ε actually used against `cross_cost`. A cost matrix that is
    /// identically zero has no scale; `eps_reg` is then used as is, which
    /// changes nothing since every coupling costs zero.
    pub fn effective_epsilon(&self, cross_cost: &Matrix) -> Result<f64> {
        if !(self.eps_reg > 0.0 && self.eps_reg.is_finite()) {
            return Err(MetricError::NonPositiveEpsilon(self.eps_reg));
        }
        Ok(match self.scaling {
            EpsilonScaling::Absolute => self.eps_reg,
            EpsilonScaling::RelativeToMeanCost => {
                let mean = cross_cost.mean();
                if mean > 0.0 {
                    self.eps_reg * mean
                } else {
                    self.eps_reg
                }
            }
        })
    }
}

/// Converged (or capped) dual potentials of one entropic OT problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropicSolution {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    /// Dual objective `⟨a, f⟩ + ⟨b, g⟩`, equal to `OT_ε` at the optimum.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_violation: f64,
}

impl EntropicSolution {
    /// `P_ij = a_i b_j exp((f_i + g_j − C_ij)/ε)`
    pub fn plan(&self, cost: &Matrix) -> Matrix {
        let (n, m) = (cost.rows(), cost.cols());
        let log_ab = -((n * m) as f64).ln();
        let mut p = Matrix::zeros(n, m);
        p.as_mut_slice()
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, row)| {
                let fi = self.f[i];
                for ((pij, &gj), &c) in row.iter_mut().zip(&self.g).zip(cost.row(i)) {
                    *pij = ((fi + gj - c) / self.epsilon + log_ab).exp();
                }
            });
        p
    }

    /// `Σ_ij P_ij (f_i + g_j − C_ij)/ε`, the relative entropy of the plan
    /// against the product measure. By the envelope theorem this is also
    /// `∂OT_ε/∂ε` at fixed cost.
    pub fn entropy_term(&self, plan: &Matrix, cost: &Matrix) -> f64 {
        let mut s = 0.0;
        for (i, (prow, crow)) in plan.row_iter().zip(cost.row_iter()).enumerate() {
            let fi = self.f[i];
            for ((&p, &c), &gj) in prow.iter().zip(crow).zip(&self.g) {
                if p > 0.0 {
                    s += p * (fi + gj - c);
                }
            }
        }
        s / self.epsilon
    }
}

/// Entropic OT between uniform marginals on an explicit cost matrix.
pub fn entropic_ot(cost: &Matrix, epsilon: f64, max_iter: usize, tol: f64) -> Result<EntropicSolution> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MetricError::NonPositiveEpsilon(epsilon));
    }
    let (n, m) = (cost.rows(), cost.cols());
    if n == 0 || m == 0 {
        return Err(MetricError::TooFewSamples { needed: 1, found: 0 });
    }
    let cost_t = cost.transpose();
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;

    let mut eps = cost.max_abs().max(epsilon);
    while eps > epsilon && iterations < max_iter {
        f = soft_min(cost, &g, log_b, eps);
        g = soft_min(&cost_t, &f, log_a, eps);
        iterations += 1;
        eps = (eps * 0.5).max(epsilon);
    }

    g = soft_min(&cost_t, &f, log_a, epsilon);
    let mut converged = false;
    let mut violation;
    loop {
        let f_next = soft_min(cost, &g, log_b, epsilon);
        // With g freshly updated the column marginals are exact; the row
        // marginal of (f, g) is a_i exp((f_i − f_next_i)/ε).
        violation = f
            .iter()
            .zip(&f_next)
            .fold(0.0f64, |v, (fo, fnew)| v.max(((fo - fnew) / epsilon).exp_m1().abs()))
            / n as f64;
        if violation < tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        f = f_next;
        g = soft_min(&cost_t, &f, log_a, epsilon);
        iterations += 1;
    }

    let value = f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64;
    Ok(EntropicSolution {
        f,
        g,
        epsilon,
        value,
        iterations,
        converged,
        marginal_violation: violation,
    })
}

/// Entropic OT of a uniform measure against itself on a symmetric cost.
///
/// The optimal potentials coincide (`f = g`), so the solver iterates the
/// averaged map `f ← ½(f + T(f))`, which avoids the slow oscillation plain
/// alternating updates show when ε is small next to the nearest-neighbour gaps.
pub fn entropic_ot_symmetric(cost: &Matrix, epsilon: f64, max_iter: usize, tol: f64) -> Result<EntropicSolution> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MetricError::NonPositiveEpsilon(epsilon));
    }
    if !cost.is_square() || cost.rows() == 0 {
        return Err(MetricError::DimensionMismatch {
            left: cost.rows(),
            right: cost.cols(),
        });
    }
    let n = cost.rows();
    let log_a = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut iterations = 0;
    let average = |f: &[f64], t: Vec<f64>| -> Vec<f64> { f.iter().zip(t).map(|(a, b)| 0.5 * (a + b)).collect() };

    let mut eps = cost.max_abs().max(epsilon);
    while eps > epsilon && iterations < max_iter {
        f = average(&f, soft_min(cost, &f, log_a, eps));
        iterations += 1;
        eps = (eps * 0.5).max(epsilon);
    }

    let mut converged = false;
    let mut violation;
    loop {
        let t = soft_min(cost, &f, log_a, epsilon);
        violation = f
            .iter()
            .zip(&t)
            .fold(0.0f64, |v, (fo, tn)| v.max(((fo - tn) / epsilon).exp_m1().abs()))
            / n as f64;
        if violation < tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        f = average(&f, t);
        iterations += 1;
    }

    let value = 2.0 * f.iter().sum::<f64>() / n as f64;
    Ok(EntropicSolution {
        g: f.clone(),
        f,
        epsilon,
        value,
        iterations,
        converged,
        marginal_violation: violation,
    })
}

/// `out_i = −ε log Σ_j exp(log_w + (pot_j − C_ij)/ε)`
fn soft_min(cost: &Matrix, pot: &[f64], log_w: f64, eps: f64) -> Vec<f64> {
    (0..cost.rows())
        .into_par_iter()
        .map(|i| {
            let row = cost.row(i);
            let mut hi = f64::NEG_INFINITY;
            for (&p, &c) in pot.iter().zip(row) {
                hi = hi.max((p - c) / eps);
            }
            let s: f64 = pot.iter().zip(row).map(|(&p, &c)| ((p - c) / eps - hi).exp()).sum();
            -eps * (hi + s.ln() + log_w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    pub divergence: f64,
    /// Plan of the cross term `OT_ε(x, y)`.
    pub plan_xy: TransportPlan,
    /// Largest iteration count among the three terms.
    pub iterations: usize,
    /// All three terms converged.
    pub converged: bool,
    pub epsilon_reg: f64,
    /// The absolute ε shared by all three terms.
    pub epsilon: f64,
}

/// The three entropic problems behind one divergence evaluation, kept for
/// callers that differentiate through it.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornParts {
    pub cost_xy: Matrix,
    pub cost_xx: Matrix,
    pub cost_yy: Matrix,
    pub xy: EntropicSolution,
    pub xx: EntropicSolution,
    pub yy: EntropicSolution,
    pub epsilon: f64,
}

impl SinkhornParts {
    pub fn solve(x: &Matrix, y: &Matrix, cfg: &SinkhornConfig) -> Result<Self> {
        let cost_xy = pairwise_sq_dists(x, y)?;
        let cost_xx = pairwise_sq_dists(x, x)?;
        let cost_yy = pairwise_sq_dists(y, y)?;
        let epsilon = cfg.effective_epsilon(&cost_xy)?;
        // A symmetric cross cost (x = y up to round-off-free equality) goes
        // through the same solver as the self terms so the debiasing cancels.
        let xy = if cost_xy.is_square() && cost_xy.asymmetry() == 0.0 {
            entropic_ot_symmetric(&cost_xy, epsilon, cfg.max_iter, cfg.tol)?
        } else {
            entropic_ot(&cost_xy, epsilon, cfg.max_iter, cfg.tol)?
        };
        let xx = entropic_ot_symmetric(&cost_xx, epsilon, cfg.max_iter, cfg.tol)?;
        let yy = entropic_ot_symmetric(&cost_yy, epsilon, cfg.max_iter, cfg.tol)?;
        Ok(Self {
            cost_xy,
            cost_xx,
            cost_yy,
            xy,
            xx,
            yy,
            epsilon,
        })
    }

    pub fn divergence(&self) -> f64 {
        self.xy.value - 0.5 * self.xx.value - 0.5 * self.yy.value
    }

    pub fn converged(&self) -> bool {
        self.xy.converged && self.xx.converged && self.yy.converged
    }

    pub fn iterations(&self) -> usize {
        self.xy.iterations.max(self.xx.iterations).max(self.yy.iterations)
    }

    pub fn plan_xy(&self) -> TransportPlan {
        let weights = self.xy.plan(&self.cost_xy);
        let total_cost = weights
            .as_slice()
            .iter()
            .zip(self.cost_xy.as_slice())
            .map(|(w, c)| w * c)
            .sum();
        TransportPlan {
            row_marginal: uniform(weights.rows()),
            col_marginal: uniform(weights.cols()),
            weights,
            total_cost,
        }
    }
}

/// Debiased divergence with relative ε; see [`sinkhorn_divergence_with`].
pub fn sinkhorn_divergence(
    x: &EmbeddingSet,
    y: &EmbeddingSet,
    eps_reg: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornResult> {
    let cfg = SinkhornConfig {
        eps_reg,
        max_iter,
        tol,
        ..SinkhornConfig::default()
    };
    sinkhorn_divergence_with(x, y, &cfg)
}

pub fn sinkhorn_divergence_with(
    x: &EmbeddingSet,
    y: &EmbeddingSet,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    check_same_dim(x, y)?;
    let parts = SinkhornParts::solve(x.points(), y.points(), cfg)?;
    Ok(SinkhornResult {
        divergence: parts.divergence(),
        plan_xy: parts.plan_xy(),
        iterations: parts.iterations(),
        converged: parts.converged(),
        epsilon_reg: cfg.eps_reg,
        epsilon: parts.epsilon,
    })
}
