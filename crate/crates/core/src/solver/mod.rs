//! ADMM solver for spatially regularized nonnegative spectroscopic-image
//! estimation.
//!
//! The problem solved is
//!
//! ```text
//! min_{F >= 0}  ||(M - K F) T||_F^2  +  lambda ||F Cᵀ||_F^2
//! ```
//!
//! where `M` is the P x N data matrix, `K` the P x Q dictionary, `T` the
//! diagonal object mask, and `C` periodic forward differences over the two
//! spatial axes. Three splitting variables are used: `X` for the data term,
//! `Y` for the nonnegativity constraint, and `Z` for the smoothness term,
//! with scaled multipliers `G`, `H`, `R`. Per iteration:
//!
//! 1. `F` <- average of `(X+G, Y+H, Z+R)` (the `X+G` term only where the
//!    mask is 1, with 1/3 vs 1/2 weighting);
//! 2. `X` <- `(KᵀK + μI)⁻¹ (KᵀM + μ(F T - G))`, via a precomputed factorization;
//! 3. `Y` <- `max(F - H, 0)`;
//! 4. `Z` <- `μ (F - R)(μI + λCᵀC)⁻¹`, solved in the spatial-frequency domain;
//! 5. multiplier updates `G -= F T - X`, `H -= F - Y`, `R -= F - Z`.
//!
//! Iteration stops when the relative primal and dual residuals fall below the
//! configured tolerance or `max_iters` is reached. The returned image is the
//! `Y` iterate, so the nonnegativity constraint holds exactly in the output.

mod data_inverse;
pub mod nnls;
mod smoothness;

pub use data_inverse::{precompute_data_inverse, DataInverse};
pub use smoothness::smoothness_solve;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DecayDictionary, SpectroscopicImage};
use crate::phantom::MeasuredDataset;
use smoothness::SmoothnessSolver;

const ROW_CHUNK: usize = 64;
const COLUMN_CHUNK: usize = 256;

/// Below this element count the solver runs its elementwise passes serially;
/// thread-pool dispatch would dominate on tiny problems. The branch depends
/// only on the problem size, so results stay deterministic.
const PARALLEL_THRESHOLD: usize = 1 << 15;

macro_rules! zip_apply {
    ($parallel:expr, $zip:expr, $body:expr) => {
        if $parallel {
            $zip.par_for_each($body);
        } else {
            $zip.for_each($body);
        }
    };
}

/// Spatial coupling scheme. Only periodic 4-neighbor first differences are
/// supported; the periodic boundary is what makes the smoothness subproblem
/// diagonal in the frequency domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborScheme {
    #[default]
    Periodic4,
}

/// Initial iterate.
#[derive(Debug, Clone, Default)]
pub enum Init {
    #[default]
    Zero,
    /// User-supplied Q x N starting spectra.
    Warm(Array2<f64>),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub lambda: f64,
    pub mu: f64,
    pub max_iters: usize,
    /// Relative primal/dual residual threshold.
    pub tolerance: f64,
    pub neighbor_scheme: NeighborScheme,
    pub init: Init,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.01,
            mu: 1.0,
            max_iters: 5000,
            tolerance: 1e-6,
            neighbor_scheme: NeighborScheme::Periodic4,
            init: Init::Zero,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::config("max_iters must be >= 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::config("tolerance must be >= 0"));
        }
        Ok(())
    }
}

/// Convergence report for one solve.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub iterations: usize,
    pub converged: bool,
    pub primal_residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
    pub final_objective: f64,
}

/// Full ADMM iterate state.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub f: Array2<f64>,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub z: Array2<f64>,
    pub g: Array2<f64>,
    pub h: Array2<f64>,
    pub r: Array2<f64>,
    pub mask: Vec<u8>,
    pub mu: f64,
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Sum of squared iterate-to-iterate changes of (X, Y, Z) from the last
    /// completed iteration.
    pub last_delta_sq: f64,
}

impl AdmmState {
    fn zeros(q: usize, n: usize, mask: Vec<u8>, mu: f64) -> Self {
        AdmmState {
            f: Array2::zeros((q, n)),
            x: Array2::zeros((q, n)),
            y: Array2::zeros((q, n)),
            z: Array2::zeros((q, n)),
            g: Array2::zeros((q, n)),
            h: Array2::zeros((q, n)),
            r: Array2::zeros((q, n)),
            mask,
            mu,
            iteration: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            last_delta_sq: 0.0,
        }
    }
}

/// Deterministic Frobenius-norm-squared: fixed row chunks reduced in order,
/// independent of thread count.
fn par_row_chunk_sum<F>(nrows: usize, term: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let ranges: Vec<(usize, usize)> = (0..nrows)
        .step_by(ROW_CHUNK)
        .map(|r| (r, (r + ROW_CHUNK).min(nrows)))
        .collect();
    if ranges.len() == 1 {
        return term(0, nrows);
    }
    let partials: Vec<f64> = ranges.par_iter().map(|&(a, b)| term(a, b)).collect();
    partials.iter().sum()
}

fn frob_sq(a: &Array2<f64>) -> f64 {
    par_row_chunk_sum(a.nrows(), |r0, r1| {
        a.slice(ndarray::s![r0..r1, ..])
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
    })
}

fn frob_sq_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    par_row_chunk_sum(a.nrows(), |r0, r1| {
        let av = a.slice(ndarray::s![r0..r1, ..]);
        let bv = b.slice(ndarray::s![r0..r1, ..]);
        av.iter()
            .zip(bv.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    })
}

/// ||F·T - X||_F^2 with T the diagonal 0/1 mask over voxels (columns).
fn masked_diff_sq(f: &Array2<f64>, x: &Array2<f64>, maskf: &[f64]) -> f64 {
    let n = f.ncols();
    par_row_chunk_sum(f.nrows(), |r0, r1| {
        let fv = f.slice(ndarray::s![r0..r1, ..]);
        let xv = x.slice(ndarray::s![r0..r1, ..]);
        let mut sum = 0.0;
        for (frow, xrow) in fv.rows().into_iter().zip(xv.rows()) {
            let fs = frow.as_slice().expect("contiguous row");
            let xs = xrow.as_slice().expect("contiguous row");
            for i in 0..n {
                let d = fs[i] * maskf[i] - xs[i];
                sum += d * d;
            }
        }
        sum
    })
}

/// Chunked parallel matrix product (deterministic for any thread count).
pub(crate) fn par_mat_mul(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((a.nrows(), b.ncols()));
    if out.len() < PARALLEL_THRESHOLD || b.ncols() <= COLUMN_CHUNK {
        general_mat_mul(1.0, a, b, 0.0, &mut out.view_mut());
        return out;
    }
    out.axis_chunks_iter_mut(Axis(1), COLUMN_CHUNK)
        .into_par_iter()
        .zip(b.axis_chunks_iter(Axis(1), COLUMN_CHUNK).into_par_iter())
        .for_each(|(mut oc, bc)| {
            general_mat_mul(1.0, a, &bc, 0.0, &mut oc);
        });
    out
}

/// Primal and dual residuals of an ADMM state, relative to ||F||_F when it is
/// nonzero and absolute otherwise.
pub fn residuals(state: &AdmmState) -> (f64, f64) {
    let maskf: Vec<f64> = state.mask.iter().map(|&t| t as f64).collect();
    let primal_sq = masked_diff_sq(&state.f, &state.x, &maskf)
        + frob_sq_diff(&state.f, &state.y)
        + frob_sq_diff(&state.f, &state.z);
    let dual_abs = state.mu * state.last_delta_sq.sqrt();
    let fnorm = frob_sq(&state.f).sqrt();
    if fnorm > 0.0 {
        (primal_sq.sqrt() / fnorm, dual_abs / fnorm)
    } else {
        (primal_sq.sqrt(), dual_abs)
    }
}

/// Objective of the estimation problem at `f`:
/// `||(M - K F) T||_F^2 + lambda ||F Cᵀ||_F^2`.
pub fn objective(
    f: &Array2<f64>,
    dict: &DecayDictionary,
    ds: &MeasuredDataset,
    config: &SolverConfig,
) -> Result<f64> {
    if f.nrows() != dict.atom_count() {
        return Err(Error::config(format!(
            "objective: F has {} rows but dictionary has {} atoms",
            f.nrows(),
            dict.atom_count()
        )));
    }
    if f.ncols() != ds.voxel_count() {
        return Err(Error::config(format!(
            "objective: F has {} columns but dataset has {} voxels",
            f.ncols(),
            ds.voxel_count()
        )));
    }
    if ds.encoding_count() != dict.encoding_count() {
        return Err(Error::config(
            "objective: dataset and dictionary encoding counts differ",
        ));
    }
    Ok(objective_inner(
        f,
        &dict.kernel().view(),
        ds,
        config.lambda,
    ))
}

fn objective_inner(
    f: &Array2<f64>,
    kernel: &ArrayView2<'_, f64>,
    ds: &MeasuredDataset,
    lambda: f64,
) -> f64 {
    let kf = par_mat_mul(kernel, &f.view());
    let maskf: Vec<f64> = ds.mask.iter().map(|&t| t as f64).collect();
    let n = ds.voxel_count();
    let data_term = par_row_chunk_sum(kf.nrows(), |r0, r1| {
        let mv = ds.data.slice(ndarray::s![r0..r1, ..]);
        let kv = kf.slice(ndarray::s![r0..r1, ..]);
        let mut sum = 0.0;
        for (mrow, krow) in mv.rows().into_iter().zip(kv.rows()) {
            let ms = mrow.as_slice().expect("contiguous row");
            let ks = krow.as_slice().expect("contiguous row");
            for i in 0..n {
                let d = (ms[i] - ks[i]) * maskf[i];
                sum += d * d;
            }
        }
        sum
    });
    if lambda == 0.0 {
        return data_term;
    }
    let (w, h) = (ds.width, ds.height);
    let reg = par_row_chunk_sum(f.nrows(), |r0, r1| {
        let fv = f.slice(ndarray::s![r0..r1, ..]);
        let mut sum = 0.0;
        for row in fv.rows() {
            let v = row.as_slice().expect("contiguous row");
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let right = y * w + (x + 1) % w;
                    let down = ((y + 1) % h) * w + x;
                    let dx = v[right] - v[i];
                    let dy = v[down] - v[i];
                    sum += dx * dx + dy * dy;
                }
            }
        }
        sum
    });
    data_term + lambda * reg
}

/// Solve the estimation problem for a dataset with a matching dictionary.
/// Returns the nonnegative spectroscopic image (the `Y` iterate) and a
/// convergence report.
pub fn solve(
    ds: &MeasuredDataset,
    dict: &DecayDictionary,
    config: &SolverConfig,
) -> Result<(SpectroscopicImage, SolverReport)> {
    config.validate()?;
    if ds.schedule != dict.schedule() {
        return Err(Error::config(
            "solve: dataset schedule does not match dictionary schedule",
        ));
    }
    let q = dict.atom_count();
    let n = ds.voxel_count();
    let kernel = dict.kernel();
    let maskf: Vec<f64> = ds.mask.iter().map(|&t| t as f64).collect();

    let data_inv = DataInverse::from_kernel(kernel.view(), config.mu)?;
    let smoother = SmoothnessSolver::new(ds.width, ds.height, config.mu, config.lambda)?;
    let kt_m = par_mat_mul(&kernel.t(), &ds.data.view());

    let mut state = AdmmState::zeros(q, n, ds.mask.clone(), config.mu);
    if let Init::Warm(f0) = &config.init {
        if f0.dim() != (q, n) {
            return Err(Error::config(format!(
                "warm start has shape {:?}, expected ({q}, {n})",
                f0.dim()
            )));
        }
        state.f.assign(f0);
        Zip::indexed(&mut state.x)
            .and(f0)
            .for_each(|(_, i), x, &f| *x = f * maskf[i]);
        state.y.assign(f0);
        state.z.assign(f0);
    }

    let mut bb = Array2::<f64>::zeros((q, n));
    let mut primal_trace = Vec::new();
    let mut dual_trace = Vec::new();
    let mut converged = false;
    let mu = config.mu;
    let parallel = q * n >= PARALLEL_THRESHOLD;

    for iter in 1..=config.max_iters {
        // Step 1: F <- averaged splitting variables.
        zip_apply!(
            parallel,
            Zip::from(&mut state.f)
                .and(&state.y)
                .and(&state.h)
                .and(&state.z)
                .and(&state.r),
            |f: &mut f64, &y: &f64, &h: &f64, &z: &f64, &r: &f64| *f = y + h + z + r
        );
        {
            let x = &state.x;
            let g = &state.g;
            let maskf = &maskf;
            zip_apply!(parallel, Zip::indexed(&mut state.f), |(qi, i): (
                usize,
                usize
            ),
                                                             f: &mut f64| {
                if maskf[i] == 1.0 {
                    *f = (*f + x[(qi, i)] + g[(qi, i)]) / 3.0;
                } else {
                    *f *= 0.5;
                }
            });
        }

        // Step 2: X <- (KᵀK + μI)⁻¹ (KᵀM + μ(F T - G)).
        {
            let maskf = &maskf;
            zip_apply!(
                parallel,
                Zip::indexed(&mut bb).and(&kt_m).and(&state.f).and(&state.g),
                |(_, i): (usize, usize), b: &mut f64, &ktm: &f64, &f: &f64, &g: &f64| {
                    *b = ktm + mu * (f * maskf[i] - g);
                }
            );
        }
        data_inv.apply_matrix_in_place(&mut bb);
        let mut delta_sq = frob_sq_diff(&bb, &state.x);
        std::mem::swap(&mut state.x, &mut bb);

        // Step 3: Y <- max(F - H, 0).
        zip_apply!(
            parallel,
            Zip::from(&mut bb).and(&state.f).and(&state.h),
            |b: &mut f64, &f: &f64, &h: &f64| *b = (f - h).max(0.0)
        );
        delta_sq += frob_sq_diff(&bb, &state.y);
        std::mem::swap(&mut state.y, &mut bb);

        // Step 4: Z <- μ (F - R)(μI + λCᵀC)⁻¹ via the frequency domain.
        zip_apply!(
            parallel,
            Zip::from(&mut bb).and(&state.f).and(&state.r),
            |b: &mut f64, &f: &f64, &r: &f64| *b = f - r
        );
        smoother.apply_in_place(&mut bb);
        delta_sq += frob_sq_diff(&bb, &state.z);
        std::mem::swap(&mut state.z, &mut bb);

        // Step 5: multiplier updates.
        {
            let maskf = &maskf;
            let x = &state.x;
            zip_apply!(
                parallel,
                Zip::indexed(&mut state.g).and(&state.f),
                |(qi, i): (usize, usize), g: &mut f64, &f: &f64| {
                    *g -= f * maskf[i] - x[(qi, i)]
                }
            );
        }
        zip_apply!(
            parallel,
            Zip::from(&mut state.h).and(&state.f).and(&state.y),
            |h: &mut f64, &f: &f64, &y: &f64| *h -= f - y
        );
        zip_apply!(
            parallel,
            Zip::from(&mut state.r).and(&state.f).and(&state.z),
            |r: &mut f64, &f: &f64, &z: &f64| *r -= f - z
        );

        state.iteration = iter;
        state.last_delta_sq = delta_sq;
        let (primal, dual) = residuals(&state);
        state.primal_residual = primal;
        state.dual_residual = dual;
        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::numerical(format!(
                "solve diverged: non-finite residuals at iteration {iter} (primal {primal}, dual {dual})"
            )));
        }
        primal_trace.push(primal);
        dual_trace.push(dual);
        if primal < config.tolerance && dual < config.tolerance {
            converged = true;
            break;
        }
    }

    let final_objective = objective_inner(&state.y, &kernel.view(), ds, config.lambda);
    let iterations = state.iteration;
    let image = SpectroscopicImage::from_values(state.y, dict.grid().clone(), ds.width, ds.height)?;
    Ok((
        image,
        SolverReport {
            iterations,
            converged,
            primal_residuals: primal_trace,
            dual_residuals: dual_trace,
            final_objective,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_dictionary, log_grid, KernelMode, SpectralGrid};
    use crate::phantom::default_2d_schedule;
    use ndarray::array;

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::default();
        cfg.mu = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::default();
        cfg.lambda = -1.0;
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig::default();
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn residuals_zero_at_fixed_point() {
        let q = 4;
        let n = 6;
        let mut state = AdmmState::zeros(q, n, vec![1; n], 1.0);
        // A consistent point: F = X = Y = Z (all nonnegative), no deltas.
        for (idx, v) in state.f.iter_mut().enumerate() {
            *v = (idx % 5) as f64;
        }
        state.x.assign(&state.f);
        state.y.assign(&state.f);
        state.z.assign(&state.f);
        state.last_delta_sq = 0.0;
        let (p, d) = residuals(&state);
        assert_eq!(p, 0.0);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn residuals_absolute_when_f_is_zero() {
        let q = 3;
        let n = 4;
        let mut state = AdmmState::zeros(q, n, vec![1; n], 2.0);
        state.x[(0, 0)] = 3.0;
        state.last_delta_sq = 4.0;
        let (p, d) = residuals(&state);
        assert_eq!(p, 3.0);
        assert_eq!(d, 2.0 * 2.0);
    }

    #[test]
    fn objective_matches_brute_force() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let grid = SpectralGrid::new(
            log_grid(100.0, 3000.0, 2).unwrap(),
            log_grid(2.0, 300.0, 3).unwrap(),
        )
        .unwrap();
        let schedule: Vec<_> = default_2d_schedule().into_iter().take(5).collect();
        let dict = build_dictionary(&schedule, &grid, KernelMode::T1T2).unwrap();
        let (w, h) = (3usize, 2usize);
        let n = w * h;
        let q = grid.len();
        let mut data = Array2::<f64>::zeros((5, n));
        for v in data.iter_mut() {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        let mask = vec![1, 0, 1, 1, 0, 1];
        let ds = MeasuredDataset::new(data, schedule, w, h, mask.clone()).unwrap();
        let mut f = Array2::<f64>::zeros((q, n));
        for v in f.iter_mut() {
            *v = rng.random::<f64>();
        }
        let config = SolverConfig {
            lambda: 0.37,
            ..Default::default()
        };
        let got = objective(&f, &dict, &ds, &config).unwrap();

        // Brute force: explicit double loops over voxels and neighbor pairs.
        let mut want = 0.0;
        for i in 0..n {
            if mask[i] == 0 {
                continue;
            }
            for p in 0..5 {
                let mut kf = 0.0;
                for qq in 0..q {
                    kf += dict.kernel()[(p, qq)] * f[(qq, i)];
                }
                let d = ds.data[(p, i)] - kf;
                want += d * d;
            }
        }
        let mut reg = 0.0;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let right = y * w + (x + 1) % w;
                let down = ((y + 1) % h) * w + x;
                for qq in 0..q {
                    let dx = f[(qq, right)] - f[(qq, i)];
                    let dy = f[(qq, down)] - f[(qq, i)];
                    reg += dx * dx + dy * dy;
                }
            }
        }
        want += 0.37 * reg;
        assert!(
            ((got - want) / want).abs() < 1e-10,
            "objective {got} vs brute force {want}"
        );
    }

    #[test]
    fn objective_special_cases() {
        let grid = SpectralGrid::new(
            log_grid(100.0, 3000.0, 2).unwrap(),
            log_grid(2.0, 300.0, 2).unwrap(),
        )
        .unwrap();
        let schedule: Vec<_> = default_2d_schedule().into_iter().take(3).collect();
        let dict = build_dictionary(&schedule, &grid, KernelMode::T1T2).unwrap();
        let data = array![[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]];
        let ds = MeasuredDataset::new(data, schedule, 2, 1, vec![1, 0]).unwrap();
        let config = SolverConfig {
            lambda: 5.0,
            ..Default::default()
        };
        // F = 0: objective is the masked squared data norm.
        let f = Array2::<f64>::zeros((4, 2));
        let got = objective(&f, &dict, &ds, &config).unwrap();
        assert!((got - (1.0 + 0.25 + 0.0)).abs() < 1e-14);
        // Spatially constant F: the periodic regularizer vanishes.
        let fc = Array2::<f64>::from_elem((4, 2), 1.3);
        let no_reg = SolverConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let with_reg = objective(&fc, &dict, &ds, &config).unwrap();
        let without = objective(&fc, &dict, &ds, &no_reg).unwrap();
        assert!((with_reg - without).abs() < 1e-12);
    }
}
