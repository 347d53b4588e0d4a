//! Reference nonnegative least squares solver (Lawson-Hanson active set).
//!
//! Minimizes `||A x - b||_2` subject to `x >= 0` by moving coordinates
//! between the active (zero) and passive (free) sets, re-solving an
//! unconstrained least-squares problem on the passive columns with
//! Householder QR at each step.
//!
//! This is a different algorithm family from the ADMM solver and serves as
//! its independent verification oracle for the spatially uncoupled case.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Least squares `min ||A z - b||` for a column subset of `a`, via
/// Householder QR on the packed submatrix. Returns `z` (one entry per
/// passive column, in `passive` order).
fn least_squares_subset(a: &Array2<f64>, b: &[f64], passive: &[usize]) -> Result<Vec<f64>> {
    let m = a.nrows();
    let n = passive.len();
    debug_assert!(n <= m, "passive set larger than row count");
    // Pack the submatrix column-major and the rhs.
    let mut r = vec![0.0; m * n];
    for (jj, &j) in passive.iter().enumerate() {
        for i in 0..m {
            r[jj * m + i] = a[(i, j)];
        }
    }
    let mut rhs = b.to_vec();

    // Householder QR with implicit application to rhs.
    for k in 0..n {
        let col = &r[k * m..(k + 1) * m];
        let norm_x: f64 = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_x == 0.0 {
            return Err(Error::numerical(
                "nnls: rank-deficient passive set (zero column norm)",
            ));
        }
        let alpha = if col[k] >= 0.0 { -norm_x } else { norm_x };
        let mut v = vec![0.0; m];
        for i in k..m {
            v[i] = r[k * m + i];
        }
        v[k] -= alpha;
        let v_norm_sq: f64 = v[k..].iter().map(|x| x * x).sum();
        if v_norm_sq > 0.0 {
            let apply = |target: &mut [f64]| {
                let dot: f64 = (k..m).map(|i| v[i] * target[i]).sum();
                let scale = 2.0 * dot / v_norm_sq;
                for i in k..m {
                    target[i] -= scale * v[i];
                }
            };
            for j in k..n {
                // Split borrow: v is read-only, columns are disjoint.
                let col_j = &mut r[j * m..(j + 1) * m];
                let dot: f64 = (k..m).map(|i| v[i] * col_j[i]).sum();
                let scale = 2.0 * dot / v_norm_sq;
                for i in k..m {
                    col_j[i] -= scale * v[i];
                }
            }
            apply(&mut rhs);
        }
        r[k * m + k] = alpha;
    }

    // Back substitution on the upper triangle.
    let mut z = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = rhs[k];
        for j in (k + 1)..n {
            s -= r[j * m + k] * z[j];
        }
        let d = r[k * m + k];
        if d == 0.0 {
            return Err(Error::numerical("nnls: singular triangular factor"));
        }
        z[k] = s / d;
    }
    Ok(z)
}

/// Solve `min ||A x - b||` subject to `x >= 0`.
pub fn nnls(a: &Array2<f64>, b: &[f64]) -> Result<NnlsSolution> {
    let (m, n) = a.dim();
    if b.len() != m {
        return Err(Error::config(format!(
            "nnls: rhs length {} does not match {} rows",
            b.len(),
            m
        )));
    }
    if m == 0 || n == 0 {
        return Err(Error::config("nnls: empty problem"));
    }

    let mut x = vec![0.0; n];
    let mut passive: Vec<usize> = Vec::new();
    let mut in_passive = vec![false; n];
    let mut iterations = 0;

    // Scale-invariant dual-feasibility tolerance.
    let grad0: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| a[(i, j)] * b[i]).sum())
        .collect();
    let w_tol = 1e-10 * grad0.iter().map(|v: &f64| v.abs()).fold(0.0, f64::max).max(1e-300);

    let max_outer = 10 * n + 10;
    loop {
        // Dual vector w = Aᵀ(b - A x).
        let mut resid = b.to_vec();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for i in 0..m {
                    resid[i] -= a[(i, j)] * xj;
                }
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if in_passive[j] {
                continue;
            }
            let w: f64 = (0..m).map(|i| a[(i, j)] * resid[i]).sum();
            if w > w_tol && best.map(|(_, bw)| w > bw).unwrap_or(true) {
                best = Some((j, w));
            }
        }
        let Some((j_star, _)) = best else {
            let residual_norm = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Ok(NnlsSolution {
                x,
                residual_norm,
                iterations,
            });
        };
        if passive.len() == m || iterations >= max_outer {
            // Cannot grow the passive set further; return the current point.
            let residual_norm = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Ok(NnlsSolution {
                x,
                residual_norm,
                iterations,
            });
        }

        passive.push(j_star);
        in_passive[j_star] = true;
        iterations += 1;

        // Inner loop: restore primal feasibility on the passive set.
        loop {
            let z = match least_squares_subset(a, b, &passive) {
                Ok(z) => z,
                Err(_) => {
                    // Degenerate column: drop the most recent addition.
                    let j = passive.pop().expect("passive set nonempty");
                    in_passive[j] = false;
                    break;
                }
            };
            if z.iter().all(|&v| v > 0.0) {
                for (&j, &zj) in passive.iter().zip(z.iter()) {
                    x[j] = zj;
                }
                break;
            }
            // Step toward z until the first passive coordinate hits zero.
            let mut alpha = f64::INFINITY;
            for (&j, &zj) in passive.iter().zip(z.iter()) {
                if zj <= 0.0 {
                    let t = x[j] / (x[j] - zj);
                    if t < alpha {
                        alpha = t;
                    }
                }
            }
            for (&j, &zj) in passive.iter().zip(z.iter()) {
                x[j] += alpha * (zj - x[j]);
            }
            // Remove coordinates that reached zero.
            let eps = 1e-12;
            let mut kept = Vec::with_capacity(passive.len());
            for &j in passive.iter() {
                if x[j] > eps {
                    kept.push(j);
                } else {
                    x[j] = 0.0;
                    in_passive[j] = false;
                }
            }
            passive = kept;
            if passive.is_empty() {
                break;
            }
        }
    }
}
