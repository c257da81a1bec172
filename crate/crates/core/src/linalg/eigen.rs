//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Jacobi is slower than tridiagonal QR but converges to full relative
//! accuracy on small eigenvalues, which matters when taking square roots of
//! nearly singular covariance matrices.

use super::{LinalgError, Matrix};

/// Sweep cap for the cyclic Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;
/// Stop once the off-diagonal Frobenius norm falls below this multiple of `‖m‖_F`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
/// Inputs whose entries differ from their transpose by more than this are rejected.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Eigenvalues in `[−NEG_CLAMP_REL · trace, 0)` are clamped to zero; anything
/// more negative marks the input as indefinite.
pub const NEG_CLAMP_REL: f64 = 1e-8;

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order and
/// eigenvectors stored as the columns of `eigenvectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SymEigen {
    /// Eigenpairs of `diag(values)`, sorted descending.
    pub fn from_diagonal(values: &[f64]) -> Self {
        let d = values.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let mut eigenvectors = Matrix::zeros(d, d);
        for (col, &src) in order.iter().enumerate() {
            eigenvectors[(src, col)] = 1.0;
        }
        Self {
            eigenvalues: order.iter().map(|&i| values[i]).collect(),
            eigenvectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Column `k` of the eigenvector matrix.
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.eigenvectors.column(k)
    }

    /// `V · diag(f(λ)) · Vᵀ`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let d = self.dim();
        let v = &self.eigenvectors;
        let weights: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for (k, w) in weights.iter().enumerate() {
                    s += v[(i, k)] * w * v[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_with(|l| l)
    }
}

/// Eigendecomposition of a symmetric positive semidefinite matrix.
///
/// Negative eigenvalues within `NEG_CLAMP_REL · trace` of zero are treated as
/// round-off and clamped to 0; larger negatives are an `IndefiniteInput` error.
pub fn sym_eigen(m: &Matrix) -> Result<SymEigen, LinalgError> {
    let mut eig = sym_eigen_unclamped(m)?;
    let trace = m.trace();
    let floor = -NEG_CLAMP_REL * trace.abs().max(f64::MIN_POSITIVE);
    for l in eig.eigenvalues.iter_mut() {
        if *l < 0.0 {
            if *l < floor {
                return Err(LinalgError::IndefiniteInput {
                    eigenvalue: *l,
                    trace,
                });
            }
            *l = 0.0;
        }
    }
    Ok(eig)
}

/// Eigendecomposition of any symmetric matrix, no sign policy applied.
pub fn sym_eigen_unclamped(m: &Matrix) -> Result<SymEigen, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let asym = m.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(LinalgError::NotSymmetric { max_asymmetry: asym });
    }
    let n = m.rows();
    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    let tol = OFF_DIAGONAL_TOL * a.frobenius_norm();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > tol {
        return Err(LinalgError::NotConverged { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.rows();
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Principal square root of a symmetric PSD matrix.
pub fn spd_sqrt(m: &Matrix) -> Result<Matrix, LinalgError> {
    let eig = sym_eigen(m)?;
    Ok(eig.reconstruct_with(f64::sqrt))
}
