//! Dense linear algebra and seeded sampling shared by every other module.

mod eigen;
mod matrix;
mod rng;

use rayon::prelude::*;
use thiserror::Error;

pub use eigen::{
    spd_sqrt, sym_eigen, sym_eigen_unclamped, SymEigen, MAX_SWEEPS, NEG_CLAMP_REL,
    OFF_DIAGONAL_TOL, SYMMETRY_TOL,
};
pub use matrix::{dot, norm, outer, sq_dist, Matrix};
pub use rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max |m_ij - m_ji| = {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("Jacobi iteration did not converge within {sweeps} sweeps")]
    NotConverged { sweeps: usize },
    #[error("matrix is indefinite: eigenvalue {eigenvalue:e} with trace {trace:e}")]
    IndefiniteInput { eigenvalue: f64, trace: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// `out[i][j] = ‖x_i − y_j‖²`, computed from coordinate differences so the
/// result is never negative.
pub fn pairwise_sq_dists(x: &Matrix, y: &Matrix) -> Result<Matrix, LinalgError> {
    if x.cols() != y.cols() {
        return Err(LinalgError::DimensionMismatch {
            expected: x.cols(),
            found: y.cols(),
        });
    }
    let m = y.rows();
    let mut out = Matrix::zeros(x.rows(), m);
    if m == 0 {
        return Ok(out);
    }
    out.as_mut_slice()
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, row)| {
            let xi = x.row(i);
            for (j, o) in row.iter_mut().enumerate() {
                *o = sq_dist(xi, y.row(j));
            }
        });
    Ok(out)
}

/// `out[i][j] = ‖x_i − y_j‖`
pub fn pairwise_dists(x: &Matrix, y: &Matrix) -> Result<Matrix, LinalgError> {
    let mut d = pairwise_sq_dists(x, y)?;
    d.as_mut_slice().iter_mut().for_each(|v| *v = v.sqrt());
    Ok(d)
}

/// `n` draws from `N(mean, V diag(λ) Vᵀ)` as the rows of an `n × d` matrix.
///
/// Each row consumes `d` standard normals in order; row `i` is
/// `mean + Σ_k √λ_k ξ_k v_k`.
pub fn sample_gaussian(
    rng: &mut Rng,
    mean: &[f64],
    cov_eigen: &SymEigen,
    n: usize,
) -> Result<Matrix, LinalgError> {
    let d = cov_eigen.dim();
    if mean.len() != d || cov_eigen.eigenvectors.rows() != d {
        return Err(LinalgError::DimensionMismatch {
            expected: d,
            found: mean.len(),
        });
    }
    if let Some(&l) = cov_eigen.eigenvalues.iter().find(|&&l| l < 0.0 || !l.is_finite()) {
        return Err(LinalgError::IndefiniteInput {
            eigenvalue: l,
            trace: cov_eigen.eigenvalues.iter().sum(),
        });
    }
    let scales: Vec<f64> = cov_eigen.eigenvalues.iter().map(|l| l.sqrt()).collect();
    let v = &cov_eigen.eigenvectors;
    let mut out = Matrix::zeros(n, d);
    let mut xi = vec![0.0; d];
    for i in 0..n {
        for (x, s) in xi.iter_mut().zip(&scales) {
            *x = rng.normal() * s;
        }
        let row = out.row_mut(i);
        for (r, (&m, vrow)) in row.iter_mut().zip(mean.iter().zip(v.row_iter())) {
            *r = m + dot(vrow, &xi);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_trivial_cases() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(pairwise_sq_dists(&x, &x).unwrap().as_slice(), &[0.0]);
        let a = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0]]).unwrap();
        assert_eq!(pairwise_sq_dists(&a, &b).unwrap().as_slice(), &[9.0]);
        assert!(pairwise_sq_dists(&x, &a).is_err());
    }

    #[test]
    fn pairwise_matches_double_loop() {
        let mut rng = Rng::new(5);
        let x = Matrix::from_fn(4, 3, |_, _| rng.normal());
        let y = Matrix::from_fn(5, 3, |_, _| rng.normal());
        let got = pairwise_sq_dists(&x, &y).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (x[(i, k)] - y[(j, k)]).powi(2);
                }
                assert!((got[(i, j)] - s).abs() < 1e-10);
            }
        }
        let self_d = pairwise_sq_dists(&x, &x).unwrap();
        assert!((0..4).all(|i| self_d[(i, i)] == 0.0));
        assert_eq!(self_d.asymmetry(), 0.0);
    }

    #[test]
    fn gaussian_sample_mean_converges() {
        let mut rng = Rng::new(2024);
        let eig = SymEigen::from_diagonal(&[1.0, 1.0]);
        let s = sample_gaussian(&mut rng, &[0.0, 0.0], &eig, 10_000).unwrap();
        let mean: Vec<f64> = s.col_sums().iter().map(|c| c / 10_000.0).collect();
        assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean:?}");
    }

    #[test]
    fn degenerate_covariance_returns_mean() {
        let mut rng = Rng::new(1);
        let eig = SymEigen::from_diagonal(&[0.0, 0.0, 0.0]);
        let s = sample_gaussian(&mut rng, &[1.0, -2.0, 0.5], &eig, 7).unwrap();
        assert!(s.row_iter().all(|r| r == [1.0, -2.0, 0.5]));
    }

    #[test]
    fn gaussian_sample_is_bit_reproducible() {
        let eig = SymEigen::from_diagonal(&[3.0, 0.5, 1.0]);
        let a = sample_gaussian(&mut Rng::new(42), &[0.0; 3], &eig, 50).unwrap();
        let b = sample_gaussian(&mut Rng::new(42), &[0.0; 3], &eig, 50).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(sample_gaussian(&mut Rng::new(1), &[0.0; 2], &eig, 1).is_err());
    }
}
