//! One-sided Jacobi SVD used for CRLB computation.
//!
//! Orthogonalizing the columns of the Jacobian directly gives the
//! eigendecomposition of `JᵀJ` without ever forming the Gram matrix, so the
//! small singular values of severely graded experiments (Fisher condition
//! numbers of 1e15 and beyond) are resolved at the conditioning of `J`
//! rather than its square.

use ndarray::Array2;

/// Singular values and right singular vectors of `j` (columns of `v`),
/// sorted by descending singular value. `j` is consumed as workspace.
pub fn jacobi_svd(mut j: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = j.ncols();
    let m = j.nrows();
    let mut v = Array2::<f64>::eye(n);
    let tol = 1e-15;
    let max_sweeps = 60;

    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    let x = j[(i, p)];
                    let y = j[(i, q)];
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let x = j[(i, p)];
                    let y = j[(i, q)];
                    j[(i, p)] = c * x - s * y;
                    j[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let x = v[(i, p)];
                    let y = v[(i, q)];
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = (0..n)
        .map(|k| (0..m).map(|i| j[(i, k)] * j[(i, k)]).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap());
    let sorted_sv: Vec<f64> = order.iter().map(|&k| sv[k]).collect();
    let mut sorted_v = Array2::<f64>::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            sorted_v[(i, new_col)] = v[(i, old_col)];
        }
    }
    sv = sorted_sv;
    (sv, sorted_v)
}
