//! Precomputed solve operator for `(KᵀK + μI)⁻¹`.
//!
//! For a tall dictionary (Q > P, the usual case) the operator is applied
//! through the matrix-inversion identity
//!
//! ```text
//! (KᵀK + μI)⁻¹ = (1/μ)·(I − Kᵀ (μI + KKᵀ)⁻¹ K)
//! ```
//!
//! so only a P x P Cholesky factor is stored and each application costs two
//! thin matrix products instead of a dense Q x Q solve. When Q <= P the
//! Q x Q system is factored directly. Both routes are exact symmetric
//! factorizations of the same operator.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::model::DecayDictionary;

const COLUMN_CHUNK: usize = 256;

enum Route {
    /// Cholesky of the Q x Q matrix `KᵀK + μI`.
    Direct(Cholesky),
    /// Cholesky of the P x P matrix `μI + KKᵀ`, plus the kernel itself.
    LowRank {
        kernel: Array2<f64>,
        gram_chol: Cholesky,
    },
}

pub struct DataInverse {
    mu: f64,
    route: Route,
}

/// Build the solve operator for a dictionary's kernel.
pub fn precompute_data_inverse(dict: &DecayDictionary, mu: f64) -> Result<DataInverse> {
    DataInverse::from_kernel(dict.kernel().view(), mu)
}

impl DataInverse {
    pub fn from_kernel(kernel: ArrayView2<'_, f64>, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::config(format!("mu must be positive, got {mu}")));
        }
        let (p, q) = kernel.dim();
        let route = if q <= p {
            let mut gram = kernel.t().dot(&kernel);
            for i in 0..q {
                gram[(i, i)] += mu;
            }
            Route::Direct(Cholesky::new(&gram)?)
        } else {
            let mut gram = kernel.dot(&kernel.t());
            for i in 0..p {
                gram[(i, i)] += mu;
            }
            Route::LowRank {
                kernel: kernel.to_owned(),
                gram_chol: Cholesky::new(&gram)?,
            }
        };
        Ok(DataInverse { mu, route })
    }

    /// Apply the operator to a single vector.
    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut b = Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("shape");
        self.apply_matrix_in_place(&mut b);
        b.column(0).to_vec()
    }

    /// Apply the operator to every column of `b` in place, in fixed-size
    /// column chunks (processed in parallel above a size threshold;
    /// bit-identical for any thread count).
    pub fn apply_matrix_in_place(&self, b: &mut Array2<f64>) {
        let serial = b.ncols() <= COLUMN_CHUNK;
        match &self.route {
            Route::Direct(chol) => {
                let apply = |mut chunk: ndarray::ArrayViewMut2<'_, f64>| {
                    let n = chol.dim();
                    let cols = chunk.ncols();
                    let mut buf = vec![0.0; n];
                    for c in 0..cols {
                        for i in 0..n {
                            buf[i] = chunk[(i, c)];
                        }
                        chol.solve_in_place(&mut buf);
                        for i in 0..n {
                            chunk[(i, c)] = buf[i];
                        }
                    }
                };
                if serial {
                    apply(b.view_mut());
                } else {
                    b.axis_chunks_iter_mut(Axis(1), COLUMN_CHUNK)
                        .into_par_iter()
                        .for_each(apply);
                }
            }
            Route::LowRank { kernel, gram_chol } => {
                let p = kernel.nrows();
                let inv_mu = 1.0 / self.mu;
                let apply = |mut chunk: ndarray::ArrayViewMut2<'_, f64>| {
                    // V = K · B_chunk, solved against (μI + KKᵀ).
                    let mut v = kernel.dot(&chunk);
                    let cols = v.ncols();
                    let mut buf = vec![0.0; p];
                    for c in 0..cols {
                        for i in 0..p {
                            buf[i] = v[(i, c)];
                        }
                        gram_chol.solve_in_place(&mut buf);
                        for i in 0..p {
                            v[(i, c)] = buf[i];
                        }
                    }
                    let correction = kernel.t().dot(&v);
                    chunk.zip_mut_with(&correction, |x, &c| *x = (*x - c) * inv_mu);
                };
                if serial {
                    apply(b.view_mut());
                } else {
                    b.axis_chunks_iter_mut(Axis(1), COLUMN_CHUNK)
                        .into_par_iter()
                        .for_each(apply);
                }
            }
        }
    }
}
