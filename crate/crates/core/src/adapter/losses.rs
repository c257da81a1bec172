use super::{AdapterError, AdapterGrads, AdapterParams, ForwardCache, Result};
use crate::linalg::{sq_dist, Matrix, Rng};
use crate::metrics::{EmbeddingSet, EpsilonScaling, SinkhornConfig, SinkhornParts};

/// Rows `i` of the three matrices form one `(anchor, positive, negative)` triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Matrix,
    pub positives: Matrix,
    pub negatives: Matrix,
}

impl TripletBatch {
    pub fn new(anchors: Matrix, positives: Matrix, negatives: Matrix) -> Result<Self> {
        for m in [&positives, &negatives] {
            if m.rows() != anchors.rows() || m.cols() != anchors.cols() {
                return Err(AdapterError::DimensionMismatch {
                    expected: anchors.rows() * anchors.cols(),
                    found: m.rows() * m.cols(),
                });
            }
        }
        Ok(Self {
            anchors,
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.rows() == 0
    }
}

/// `Σ max(0, ‖g(a)−g(p)‖² − ‖g(a)−g(n)‖² + margin)` in inference mode.
pub fn triplet_loss(
    p: &AdapterParams,
    anchors: &Matrix,
    positives: &Matrix,
    negatives: &Matrix,
    margin: f64,
) -> Result<f64> {
    let batch = TripletBatch::new(anchors.clone(), positives.clone(), negatives.clone())?;
    Ok(triplet_loss_and_grad(p, &batch, margin, None)?.0)
}

/// Triplet loss and its exact gradient. With `dropout` set, every forward
/// pass draws a fresh dropout mask from it.
pub fn triplet_loss_and_grad(
    p: &AdapterParams,
    batch: &TripletBatch,
    margin: f64,
    mut dropout: Option<&mut Rng>,
) -> Result<(f64, AdapterGrads)> {
    if margin < 0.0 {
        return Err(AdapterError::InvalidConfig(format!("negative margin {margin}")));
    }
    let mut grads = AdapterGrads::zeros_like(p);
    let mut loss = 0.0;
    let mut run = |z: &[f64]| -> Result<ForwardCache> {
        let mask = dropout.as_deref_mut().map(|rng| p.draw_mask(rng));
        p.forward(z, mask.as_deref())
    };
    for t in 0..batch.len() {
        let a = run(batch.anchors.row(t))?;
        let pos = run(batch.positives.row(t))?;
        let neg = run(batch.negatives.row(t))?;
        let hinge = sq_dist(&a.out, &pos.out) - sq_dist(&a.out, &neg.out) + margin;
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;
        let ga: Vec<f64> = pos.out.iter().zip(&neg.out).map(|(p, n)| 2.0 * (n - p)).collect();
        let gp: Vec<f64> = a.out.iter().zip(&pos.out).map(|(a, p)| 2.0 * (p - a)).collect();
        let gn: Vec<f64> = a.out.iter().zip(&neg.out).map(|(a, n)| 2.0 * (a - n)).collect();
        p.backward(&a, &ga, &mut grads);
        p.backward(&pos, &gp, &mut grads);
        p.backward(&neg, &gn, &mut grads);
    }
    Ok((loss, grads))
}

/// Debiased Sinkhorn divergence between the adapted batches.
pub fn sinkhorn_native_loss(
    p: &AdapterParams,
    batch_ref: &EmbeddingSet,
    batch_test: &EmbeddingSet,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    let x = p.apply_set(batch_ref)?;
    let y = p.apply_set(batch_test)?;
    Ok(SinkhornParts::solve(x.points(), y.points(), cfg)?.divergence())
}

/// Native loss and its gradient, treating the converged plans as fixed.
///
/// With relative ε the regularisation itself moves with the points; that
/// dependence enters through `∂S/∂ε`, which at fixed plans is the weighted
/// difference of the three entropy terms.
pub fn native_loss_and_grad(
    p: &AdapterParams,
    batch_ref: &Matrix,
    batch_test: &Matrix,
    cfg: &SinkhornConfig,
    mut dropout: Option<&mut Rng>,
) -> Result<(f64, AdapterGrads)> {
    let mut forward_all = |m: &Matrix| -> Result<Vec<ForwardCache>> {
        (0..m.rows())
            .map(|i| {
                let mask = dropout.as_deref_mut().map(|rng| p.draw_mask(rng));
                p.forward(m.row(i), mask.as_deref())
            })
            .collect()
    };
    let cx = forward_all(batch_ref)?;
    let cy = forward_all(batch_test)?;
    let stack = |cs: &[ForwardCache]| -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = cs.iter().map(|c| c.out.clone()).collect();
        Matrix::from_rows(&rows).map_err(|e| AdapterError::Metric(e.into()))
    };
    let x = stack(&cx)?;
    let y = stack(&cy)?;
    let parts = SinkhornParts::solve(&x, &y, cfg)?;
    let loss = parts.divergence();

    let (n, m, d) = (x.rows(), y.rows(), x.cols());
    let pxy = parts.xy.plan(&parts.cost_xy);
    let pxx = parts.xx.plan(&parts.cost_xx);
    let pyy = parts.yy.plan(&parts.cost_yy);

    let mut gx = Matrix::zeros(n, d);
    let mut gy = Matrix::zeros(m, d);
    for i in 0..n {
        for j in 0..m {
            let w = 2.0 * pxy[(i, j)];
            for k in 0..d {
                let diff = x[(i, k)] - y[(j, k)];
                gx[(i, k)] += w * diff;
                gy[(j, k)] -= w * diff;
            }
        }
    }
    self_term_grad(&x, &pxx, &mut gx);
    self_term_grad(&y, &pyy, &mut gy);

    let relative = cfg.scaling == EpsilonScaling::RelativeToMeanCost && parts.cost_xy.mean() > 0.0;
    if relative {
        let d_eps = parts.xy.entropy_term(&pxy, &parts.cost_xy)
            - 0.5 * parts.xx.entropy_term(&pxx, &parts.cost_xx)
            - 0.5 * parts.yy.entropy_term(&pyy, &parts.cost_yy);
        // ε = eps_reg · mean_ij ‖x_i − y_j‖²
        let w = d_eps * cfg.eps_reg * 2.0 / (n * m) as f64;
        let sum_x = x.col_sums();
        let sum_y = y.col_sums();
        for i in 0..n {
            for k in 0..d {
                gx[(i, k)] += w * (m as f64 * x[(i, k)] - sum_y[k]);
            }
        }
        for j in 0..m {
            for k in 0..d {
                gy[(j, k)] += w * (n as f64 * y[(j, k)] - sum_x[k]);
            }
        }
    }

    let mut grads = AdapterGrads::zeros_like(p);
    for (i, c) in cx.iter().enumerate() {
        p.backward(c, gx.row(i), &mut grads);
    }
    for (j, c) in cy.iter().enumerate() {
        p.backward(c, gy.row(j), &mut grads);
    }
    Ok((loss, grads))
}

/// Adds `∂(−½⟨P, C(x, x)⟩)/∂x` for a symmetric self plan `P`.
fn self_term_grad(x: &Matrix, plan: &Matrix, g: &mut Matrix) {
    let (n, d) = (x.rows(), x.cols());
    for i in 0..n {
        for l in 0..n {
            // −½ · (P_il + P_li) · 2 (x_i − x_l)
            let w = plan[(i, l)] + plan[(l, i)];
            if w == 0.0 || i == l {
                continue;
            }
            for k in 0..d {
                g[(i, k)] -= w * (x[(i, k)] - x[(l, k)]);
            }
        }
    }
}
