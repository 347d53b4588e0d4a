//! Small dense linear-algebra kernels shared by the estimation modules:
//! Cholesky factorization for symmetric positive definite systems and a
//! cyclic Jacobi eigendecomposition for symmetric matrices.
//!
//! The problems here are small (tens to a few thousand unknowns), so simple
//! dense routines with deterministic operation order are preferred over an
//! external BLAS/LAPACK dependency.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Cholesky factor L (lower triangular) of a symmetric positive definite matrix.
pub struct Cholesky {
    l: Array2<f64>,
    n: usize,
}

impl Cholesky {
    /// Factor `a = L Lᵀ`. Fails if `a` is not numerically positive definite.
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::config(format!(
                "cholesky: matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::numerical(format!(
                    "cholesky: matrix not positive definite at pivot {j} (value {diag:e})"
                )));
            }
            let d = diag.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut sum = a[(i, j)];
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = sum / d;
            }
        }
        Ok(Cholesky { l, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b` in place (forward then backward substitution).
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let mut x = b[i];
            for k in 0..i {
                x -= self.l[(i, k)] * b[k];
            }
            b[i] = x / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut x = b[i];
            for k in (i + 1)..n {
                x -= self.l[(k, i)] * b[k];
            }
            b[i] = x / self.l[(i, i)];
        }
    }

}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in the columns,
/// sorted by descending eigenvalue. The rotation threshold is relative to
/// the diagonal (`|a_pq| > tol·sqrt(a_pp·a_qq)`), which preserves the small
/// eigenvalues of strongly graded positive semidefinite matrices.
#[cfg_attr(not(test), allow(dead_code))]
pub fn jacobi_eigh(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::config("jacobi_eigh: matrix must be square".to_string()));
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let tol = 1e-15;
    let max_sweeps = 60;

    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let scale = (app.abs() * aqq.abs()).sqrt();
                if apq.abs() <= tol * scale || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigvecs = Array2::<f64>::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            eigvecs[(k, new_col)] = v[(k, old_col)];
        }
    }
    Ok((eigvals, eigvecs))
}
