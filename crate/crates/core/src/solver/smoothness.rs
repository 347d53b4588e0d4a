//! Spatial smoothness solve `μ·B·(μI + λCᵀC)⁻¹` in the frequency domain.
//!
//! `C` stacks one periodic forward difference per spatial axis per voxel, so
//! `CᵀC` is a circulant 2D Laplacian and is diagonalized by the 2D DFT with
//! eigenvalues
//!
//! ```text
//! c(kx, ky) = (2 - 2·cos(2π kx / W)) + (2 - 2·cos(2π ky / H)).
//! ```
//!
//! Each spectral row of `B` is an H x W image (row-major voxels); it is
//! transformed, multiplied by `μ / (μ + λ·c)`, and transformed back.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const ROW_CHUNK: usize = 32;

pub(crate) struct SmoothnessSolver {
    width: usize,
    height: usize,
    lambda: f64,
    /// mu / (mu + lambda * c(kx, ky)), indexed ky * width + kx.
    multiplier: Vec<f64>,
    fft_w: Arc<dyn Fft<f64>>,
    ifft_w: Arc<dyn Fft<f64>>,
    fft_h: Arc<dyn Fft<f64>>,
    ifft_h: Arc<dyn Fft<f64>>,
}

struct Scratch {
    buf: Vec<Complex<f64>>,
    column: Vec<Complex<f64>>,
    fft: Vec<Complex<f64>>,
}

impl SmoothnessSolver {
    pub fn new(width: usize, height: usize, mu: f64, lambda: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("smoothness solve: empty image"));
        }
        if !(mu > 0.0) || !(lambda >= 0.0) {
            return Err(Error::config(format!(
                "smoothness solve: need mu > 0 and lambda >= 0, got mu={mu} lambda={lambda}"
            )));
        }
        let mut planner = FftPlanner::<f64>::new();
        let fft_w = planner.plan_fft_forward(width);
        let ifft_w = planner.plan_fft_inverse(width);
        let fft_h = planner.plan_fft_forward(height);
        let ifft_h = planner.plan_fft_inverse(height);

        let mut multiplier = vec![0.0; width * height];
        for ky in 0..height {
            let cy = 2.0 - 2.0 * (2.0 * std::f64::consts::PI * ky as f64 / height as f64).cos();
            for kx in 0..width {
                let cx = 2.0 - 2.0 * (2.0 * std::f64::consts::PI * kx as f64 / width as f64).cos();
                multiplier[ky * width + kx] = mu / (mu + lambda * (cx + cy));
            }
        }

        Ok(SmoothnessSolver {
            width,
            height,
            lambda,
            multiplier,
            fft_w,
            ifft_w,
            fft_h,
            ifft_h,
        })
    }

    fn scratch(&self) -> Scratch {
        let n = self.width * self.height;
        let fft_len = self
            .fft_w
            .get_inplace_scratch_len()
            .max(self.ifft_w.get_inplace_scratch_len())
            .max(self.fft_h.get_inplace_scratch_len())
            .max(self.ifft_h.get_inplace_scratch_len());
        Scratch {
            buf: vec![Complex::new(0.0, 0.0); n],
            column: vec![Complex::new(0.0, 0.0); self.height],
            fft: vec![Complex::new(0.0, 0.0); fft_len],
        }
    }

    fn transform_2d(&self, scratch: &mut Scratch, inverse: bool) {
        let (w, h) = (self.width, self.height);
        let (row_fft, col_fft) = if inverse {
            (&self.ifft_w, &self.ifft_h)
        } else {
            (&self.fft_w, &self.fft_h)
        };
        for y in 0..h {
            row_fft.process_with_scratch(&mut scratch.buf[y * w..(y + 1) * w], &mut scratch.fft);
        }
        for x in 0..w {
            for y in 0..h {
                scratch.column[y] = scratch.buf[y * w + x];
            }
            col_fft.process_with_scratch(&mut scratch.column, &mut scratch.fft);
            for y in 0..h {
                scratch.buf[y * w + x] = scratch.column[y];
            }
        }
    }

    fn apply_row(&self, row: &mut [f64], scratch: &mut Scratch) {
        let n = self.width * self.height;
        debug_assert_eq!(row.len(), n);
        for (c, &v) in scratch.buf.iter_mut().zip(row.iter()) {
            *c = Complex::new(v, 0.0);
        }
        self.transform_2d(scratch, false);
        for (c, &m) in scratch.buf.iter_mut().zip(self.multiplier.iter()) {
            *c *= m;
        }
        self.transform_2d(scratch, true);
        let norm = 1.0 / n as f64;
        for (v, c) in row.iter_mut().zip(scratch.buf.iter()) {
            *v = c.re * norm;
        }
    }

    /// Filter two rows with one complex transform: pack `a + i b`. The
    /// frequency-domain multiplier is real and even, so the packed product
    /// splits back into the two filtered rows as real and imaginary parts.
    fn apply_row_pair(&self, a: &mut [f64], b: &mut [f64], scratch: &mut Scratch) {
        let n = self.width * self.height;
        debug_assert_eq!(a.len(), n);
        debug_assert_eq!(b.len(), n);
        for ((c, &x), &y) in scratch.buf.iter_mut().zip(a.iter()).zip(b.iter()) {
            *c = Complex::new(x, y);
        }
        self.transform_2d(scratch, false);
        for (c, &m) in scratch.buf.iter_mut().zip(self.multiplier.iter()) {
            *c *= m;
        }
        self.transform_2d(scratch, true);
        let norm = 1.0 / n as f64;
        for ((x, y), c) in a.iter_mut().zip(b.iter_mut()).zip(scratch.buf.iter()) {
            *x = c.re * norm;
            *y = c.im * norm;
        }
    }

    fn apply_chunk(&self, chunk: &mut ndarray::ArrayViewMut2<'_, f64>, scratch: &mut Scratch) {
        let rows = chunk.nrows();
        let mut q = 0;
        while q + 1 < rows {
            let (mut top, mut bottom) = chunk.view_mut().split_at(Axis(0), q + 1);
            let mut row_a = top.row_mut(q);
            let mut row_b = bottom.row_mut(0);
            self.apply_row_pair(
                row_a.as_slice_mut().expect("row-major rows are contiguous"),
                row_b.as_slice_mut().expect("row-major rows are contiguous"),
                scratch,
            );
            q += 2;
        }
        if q < rows {
            let mut row = chunk.row_mut(q);
            self.apply_row(
                row.as_slice_mut().expect("row-major rows are contiguous"),
                scratch,
            );
        }
    }

    /// Apply the solve to every spectral row of `rows` in place.
    /// With lambda = 0 the operator is the identity and rows pass unchanged.
    pub fn apply_in_place(&self, rows: &mut Array2<f64>) {
        if self.lambda == 0.0 {
            return;
        }
        if rows.nrows() <= ROW_CHUNK {
            let mut scratch = self.scratch();
            self.apply_chunk(&mut rows.view_mut(), &mut scratch);
            return;
        }
        rows.axis_chunks_iter_mut(Axis(0), ROW_CHUNK)
            .into_par_iter()
            .for_each_init(
                || self.scratch(),
                |scratch, mut chunk| self.apply_chunk(&mut chunk, scratch),
            );
    }
}

/// `μ·B·(μI + λCᵀC)⁻¹` for a Q x N matrix whose rows are H x W images in
/// row-major voxel order, computed row-wise in the spatial-frequency domain.
pub fn smoothness_solve(
    b: &Array2<f64>,
    mu: f64,
    lambda: f64,
    width: usize,
    height: usize,
) -> Result<Array2<f64>> {
    if b.ncols() != width * height {
        return Err(Error::config(format!(
            "smoothness solve: matrix has {} columns but width*height = {}",
            b.ncols(),
            width * height
        )));
    }
    let solver = SmoothnessSolver::new(width, height, mu, lambda)?;
    let mut out = b.clone();
    solver.apply_in_place(&mut out);
    Ok(out)
}
