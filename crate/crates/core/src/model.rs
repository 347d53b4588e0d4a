//! Exponential-decay forward models for relaxation correlation spectroscopy.
//!
//! The signal from a voxel is modeled as a nonnegative mixture of exponential
//! decays over relaxation parameters (T1, T2). Discretizing the spectral
//! integral on a logarithmic grid with quadrature weights turns the continuous
//! model into a dense dictionary matrix `K` with entries
//!
//! ```text
//! K[p][q] = w_q · (1 - 2·exp(-TI_p/T1_q)) · exp(-TE_p/T2_q)
//! ```
//!
//! so that the noiseless data for a voxel with discrete spectrum `f` is `K·f`.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One contrast encoding: an echo time and, for inversion-prepared
/// acquisitions, an inversion time. Times are in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastEncoding {
    pub te_ms: f64,
    /// `None` for pure spin-echo (T2-only) acquisitions without an inversion pulse.
    pub ti_ms: Option<f64>,
}

impl ContrastEncoding {
    /// Inversion-recovery spin-echo encoding with both TE and TI.
    pub fn inversion_recovery(te_ms: f64, ti_ms: f64) -> Self {
        ContrastEncoding {
            te_ms,
            ti_ms: Some(ti_ms),
        }
    }

    /// Spin-echo encoding without an inversion pulse.
    pub fn spin_echo(te_ms: f64) -> Self {
        ContrastEncoding { te_ms, ti_ms: None }
    }

    fn key(&self) -> (u64, Option<u64>) {
        (self.te_ms.to_bits(), self.ti_ms.map(f64::to_bits))
    }
}

/// Checks that every encoding has finite nonnegative times and that no
/// (TE, TI) pair repeats.
pub fn validate_schedule(schedule: &[ContrastEncoding]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::config("schedule must contain at least one encoding"));
    }
    let mut seen = std::collections::HashSet::new();
    for (p, enc) in schedule.iter().enumerate() {
        if !enc.te_ms.is_finite() || enc.te_ms < 0.0 {
            return Err(Error::domain(format!(
                "encoding {p}: te must be finite and >= 0, got {}",
                enc.te_ms
            )));
        }
        if let Some(ti) = enc.ti_ms {
            if !ti.is_finite() || ti < 0.0 {
                return Err(Error::domain(format!(
                    "encoding {p}: ti must be finite and >= 0, got {ti}"
                )));
            }
        }
        if !seen.insert(enc.key()) {
            return Err(Error::config(format!(
                "duplicate encoding at index {p}: te={} ti={:?}",
                enc.te_ms, enc.ti_ms
            )));
        }
    }
    Ok(())
}

/// Which relaxation axes a dictionary (or Fisher analysis) models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    /// Joint T1-T2 correlation kernel.
    T1T2,
    /// Inversion-recovery kernel only (TE factor omitted).
    T1Only,
    /// Spin-echo decay kernel only (TI factor omitted).
    T2Only,
}

/// T2 decay kernel `exp(-te/t2)`.
pub fn kernel_t2(te_ms: f64, t2_ms: f64) -> Result<f64> {
    if !(t2_ms > 0.0) || !t2_ms.is_finite() {
        return Err(Error::domain(format!("t2 must be positive, got {t2_ms}")));
    }
    if !(te_ms >= 0.0) || !te_ms.is_finite() {
        return Err(Error::domain(format!("te must be >= 0, got {te_ms}")));
    }
    Ok((-te_ms / t2_ms).exp())
}

/// Inversion-recovery kernel `1 - 2·exp(-ti/t1)`.
pub fn kernel_t1(ti_ms: f64, t1_ms: f64) -> Result<f64> {
    if !(t1_ms > 0.0) || !t1_ms.is_finite() {
        return Err(Error::domain(format!("t1 must be positive, got {t1_ms}")));
    }
    if !(ti_ms >= 0.0) || !ti_ms.is_finite() {
        return Err(Error::domain(format!("ti must be >= 0, got {ti_ms}")));
    }
    Ok(1.0 - 2.0 * (-ti_ms / t1_ms).exp())
}

/// Joint kernel: product of the inversion-recovery and spin-echo factors.
/// An encoding without TI has no inversion pulse, so its T1 factor is 1.
pub fn kernel_t1t2(enc: &ContrastEncoding, t1_ms: f64, t2_ms: f64) -> Result<f64> {
    let t1_factor = match enc.ti_ms {
        Some(ti) => kernel_t1(ti, t1_ms)?,
        None => {
            // Still validate t1 so the domain contract is uniform.
            if !(t1_ms > 0.0) || !t1_ms.is_finite() {
                return Err(Error::domain(format!("t1 must be positive, got {t1_ms}")));
            }
            1.0
        }
    };
    Ok(t1_factor * kernel_t2(enc.te_ms, t2_ms)?)
}

/// Geometrically spaced values from `min` to `max` inclusive.
pub fn log_grid(min_ms: f64, max_ms: f64, count: usize) -> Result<Vec<f64>> {
    if !(min_ms > 0.0) || !min_ms.is_finite() {
        return Err(Error::domain(format!("log_grid: min must be positive, got {min_ms}")));
    }
    if !(max_ms > min_ms) || !max_ms.is_finite() {
        return Err(Error::domain(format!(
            "log_grid: need min < max, got min={min_ms} max={max_ms}"
        )));
    }
    if count < 2 {
        return Err(Error::domain(format!("log_grid: count must be >= 2, got {count}")));
    }
    let ln_min = min_ms.ln();
    let ln_max = max_ms.ln();
    let step = (ln_max - ln_min) / (count - 1) as f64;
    let mut values: Vec<f64> = (0..count)
        .map(|k| (ln_min + step * k as f64).exp())
        .collect();
    values[0] = min_ms;
    values[count - 1] = max_ms;
    Ok(values)
}

/// Trapezoidal quadrature weights in log-space for strictly increasing nodes.
/// A single node (collapsed axis) gets weight 1.
pub fn quadrature_weights(nodes: &[f64]) -> Result<Vec<f64>> {
    if nodes.is_empty() {
        return Err(Error::domain("quadrature_weights: no nodes given"));
    }
    for (k, &x) in nodes.iter().enumerate() {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::domain(format!(
                "quadrature_weights: node {k} must be positive, got {x}"
            )));
        }
        if k > 0 && nodes[k] <= nodes[k - 1] {
            return Err(Error::domain(format!(
                "quadrature_weights: nodes must be strictly increasing at index {k}"
            )));
        }
    }
    if nodes.len() == 1 {
        return Ok(vec![1.0]);
    }
    let u: Vec<f64> = nodes.iter().map(|x| x.ln()).collect();
    let n = u.len();
    let mut w = vec![0.0; n];
    w[0] = (u[1] - u[0]) / 2.0;
    for k in 1..(n - 1) {
        w[k] = (u[k + 1] - u[k - 1]) / 2.0;
    }
    w[n - 1] = (u[n - 1] - u[n - 2]) / 2.0;
    Ok(w)
}

/// Discrete spectral grid: T1 and T2 node values plus per-node quadrature
/// weights in row-major (T1-major) order, `q = i1 * t2_count + i2`.
///
/// A 1D grid collapses the unused axis to a single placeholder node with
/// weight 1, so downstream code is dimension-agnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    t1_ms: Vec<f64>,
    t2_ms: Vec<f64>,
    weights: Vec<f64>,
}

impl SpectralGrid {
    /// Build a grid from node axes, deriving the quadrature weights as the
    /// outer product of per-axis log-trapezoid weights.
    pub fn new(t1_ms: Vec<f64>, t2_ms: Vec<f64>) -> Result<Self> {
        let w1 = quadrature_weights(&t1_ms)?;
        let w2 = quadrature_weights(&t2_ms)?;
        let mut weights = Vec::with_capacity(w1.len() * w2.len());
        for &a in &w1 {
            for &b in &w2 {
                weights.push(a * b);
            }
        }
        Ok(SpectralGrid {
            t1_ms,
            t2_ms,
            weights,
        })
    }

    /// 1D T2 grid (T1 axis collapsed).
    pub fn t2_only(t2_ms: Vec<f64>) -> Result<Self> {
        SpectralGrid::new(vec![1.0], t2_ms)
    }

    /// 1D T1 grid (T2 axis collapsed).
    pub fn t1_only(t1_ms: Vec<f64>) -> Result<Self> {
        SpectralGrid::new(t1_ms, vec![1.0])
    }

    /// Reassemble a grid from stored parts (e.g. a file header), validating
    /// the invariants.
    pub fn from_parts(t1_ms: Vec<f64>, t2_ms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let check_axis = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() {
                return Err(Error::config(format!("grid axis {name} is empty")));
            }
            for (k, &x) in v.iter().enumerate() {
                if !(x > 0.0) || !x.is_finite() {
                    return Err(Error::config(format!("grid axis {name}[{k}] must be positive")));
                }
                if k > 0 && v[k] <= v[k - 1] {
                    return Err(Error::config(format!(
                        "grid axis {name} must be strictly increasing at index {k}"
                    )));
                }
            }
            Ok(())
        };
        check_axis("t1", &t1_ms)?;
        check_axis("t2", &t2_ms)?;
        if weights.len() != t1_ms.len() * t2_ms.len() {
            return Err(Error::config(format!(
                "grid weights length {} != Q1*Q2 = {}",
                weights.len(),
                t1_ms.len() * t2_ms.len()
            )));
        }
        for (q, &w) in weights.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::config(format!("grid weight {q} must be positive, got {w}")));
            }
        }
        Ok(SpectralGrid {
            t1_ms,
            t2_ms,
            weights,
        })
    }

    pub fn t1_values(&self) -> &[f64] {
        &self.t1_ms
    }

    pub fn t2_values(&self) -> &[f64] {
        &self.t2_ms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn t1_count(&self) -> usize {
        self.t1_ms.len()
    }

    pub fn t2_count(&self) -> usize {
        self.t2_ms.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_t1_collapsed(&self) -> bool {
        self.t1_ms.len() == 1
    }

    pub fn is_t2_collapsed(&self) -> bool {
        self.t2_ms.len() == 1
    }

    /// Flat index of grid node `(i1, i2)`.
    pub fn index_of(&self, i1: usize, i2: usize) -> usize {
        i1 * self.t2_ms.len() + i2
    }

    /// `(T1, T2)` node values at flat index `q`.
    pub fn node(&self, q: usize) -> (f64, f64) {
        let i1 = q / self.t2_ms.len();
        let i2 = q % self.t2_ms.len();
        (self.t1_ms[i1], self.t2_ms[i2])
    }

    /// `(i1, i2)` axis indices at flat index `q`.
    pub fn axis_indices(&self, q: usize) -> (usize, usize) {
        (q / self.t2_ms.len(), q % self.t2_ms.len())
    }
}

/// Dense dictionary: the `P x Q` kernel matrix for a schedule and grid.
#[derive(Debug, Clone)]
pub struct DecayDictionary {
    grid: SpectralGrid,
    schedule: Vec<ContrastEncoding>,
    mode: KernelMode,
    kernel: Array2<f64>,
}

impl DecayDictionary {
    /// Wrap an externally supplied kernel (e.g. synthetic test operators).
    /// Shapes must match the grid and schedule; entries must be finite.
    /// [`build_dictionary`] is the checked construction path for physical
    /// kernels.
    pub fn from_parts(
        grid: SpectralGrid,
        schedule: Vec<ContrastEncoding>,
        mode: KernelMode,
        kernel: Array2<f64>,
    ) -> Result<Self> {
        if kernel.dim() != (schedule.len(), grid.len()) {
            return Err(Error::config(format!(
                "kernel is {:?}, expected ({}, {})",
                kernel.dim(),
                schedule.len(),
                grid.len()
            )));
        }
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("kernel contains non-finite entries"));
        }
        Ok(DecayDictionary {
            grid,
            schedule,
            mode,
            kernel,
        })
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn schedule(&self) -> &[ContrastEncoding] {
        &self.schedule
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn kernel(&self) -> &Array2<f64> {
        &self.kernel
    }

    pub fn encoding_count(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.kernel.ncols()
    }
}

/// Build the dictionary matrix for the given schedule, grid, and mode.
///
/// In `T2Only` mode the inversion factor is omitted (the grid's T1 axis must
/// be collapsed); in `T1Only` mode the echo factor is omitted (T2 axis
/// collapsed). Construction is deterministic.
pub fn build_dictionary(
    schedule: &[ContrastEncoding],
    grid: &SpectralGrid,
    mode: KernelMode,
) -> Result<DecayDictionary> {
    validate_schedule(schedule)?;
    match mode {
        KernelMode::T1T2 => {
            if grid.is_t1_collapsed() || grid.is_t2_collapsed() {
                return Err(Error::config(
                    "T1T2 mode requires at least 2 nodes on both grid axes",
                ));
            }
        }
        KernelMode::T1Only => {
            if !grid.is_t2_collapsed() {
                return Err(Error::config("T1Only mode requires a collapsed T2 axis"));
            }
        }
        KernelMode::T2Only => {
            if !grid.is_t1_collapsed() {
                return Err(Error::config("T2Only mode requires a collapsed T1 axis"));
            }
        }
    }
    let needs_ti = matches!(mode, KernelMode::T1T2 | KernelMode::T1Only);
    if needs_ti {
        if let Some(p) = schedule.iter().position(|e| e.ti_ms.is_none()) {
            return Err(Error::config(format!(
                "encoding {p} has no TI but mode {mode:?} requires inversion encodings"
            )));
        }
    }

    let p_count = schedule.len();
    let q1 = grid.t1_count();
    let q2 = grid.t2_count();

    // Separable factors: t1_factors[p][i1], t2_factors[p][i2].
    let mut t1_factors = Array2::<f64>::zeros((p_count, q1));
    let mut t2_factors = Array2::<f64>::zeros((p_count, q2));
    for (p, enc) in schedule.iter().enumerate() {
        for (i1, &t1) in grid.t1_values().iter().enumerate() {
            t1_factors[(p, i1)] = match (mode, enc.ti_ms) {
                (KernelMode::T2Only, _) => 1.0,
                (_, Some(ti)) => kernel_t1(ti, t1)?,
                (_, None) => unreachable!("ti presence checked above"),
            };
        }
        for (i2, &t2) in grid.t2_values().iter().enumerate() {
            t2_factors[(p, i2)] = match mode {
                KernelMode::T1Only => 1.0,
                _ => kernel_t2(enc.te_ms, t2)?,
            };
        }
    }

    let weights = grid.weights();
    let mut kernel = Array2::<f64>::zeros((p_count, q1 * q2));
    for p in 0..p_count {
        for i1 in 0..q1 {
            let a = t1_factors[(p, i1)];
            for i2 in 0..q2 {
                let q = i1 * q2 + i2;
                kernel[(p, q)] = weights[q] * (a * t2_factors[(p, i2)]);
            }
        }
    }

    Ok(DecayDictionary {
        grid: grid.clone(),
        schedule: schedule.to_vec(),
        mode,
        kernel,
    })
}

/// A discrete multi-compartment tissue model: amplitudes and relaxation times.
#[derive(Debug, Clone, PartialEq)]
pub struct Compartment {
    pub amplitude: f64,
    pub t1_ms: f64,
    pub t2_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentModel {
    pub compartments: Vec<Compartment>,
}

impl CompartmentModel {
    pub fn new(compartments: Vec<Compartment>) -> Result<Self> {
        if compartments.is_empty() {
            return Err(Error::config("compartment model must be nonempty"));
        }
        for (s, c) in compartments.iter().enumerate() {
            if !(c.t1_ms > 0.0) || !(c.t2_ms > 0.0) {
                return Err(Error::domain(format!(
                    "compartment {s}: relaxation times must be positive"
                )));
            }
            if !(c.amplitude >= 0.0) || !c.amplitude.is_finite() {
                return Err(Error::domain(format!(
                    "compartment {s}: amplitude must be finite and >= 0"
                )));
            }
        }
        Ok(CompartmentModel { compartments })
    }

    /// The three-compartment toy model with unit amplitudes,
    /// T1 = 750/700/1000 ms and T2 = 70/100/110 ms.
    pub fn toy_three_compartment() -> Self {
        CompartmentModel {
            compartments: vec![
                Compartment {
                    amplitude: 1.0,
                    t1_ms: 750.0,
                    t2_ms: 70.0,
                },
                Compartment {
                    amplitude: 1.0,
                    t1_ms: 700.0,
                    t2_ms: 100.0,
                },
                Compartment {
                    amplitude: 1.0,
                    t1_ms: 1000.0,
                    t2_ms: 110.0,
                },
            ],
        }
    }

    /// Same relaxation times, custom amplitudes.
    pub fn toy_with_amplitudes(amplitudes: [f64; 3]) -> Self {
        let mut model = Self::toy_three_compartment();
        for (c, &f) in model.compartments.iter_mut().zip(amplitudes.iter()) {
            c.amplitude = f;
        }
        model
    }

    pub fn len(&self) -> usize {
        self.compartments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.compartments.is_empty()
    }
}

/// A spectroscopic image: one spectrum (length Q) per voxel (N = width·height,
/// voxels in row-major spatial order). Stored as a Q x N matrix whose column i
/// is voxel i's spectrum.
#[derive(Debug, Clone)]
pub struct SpectroscopicImage {
    pub values: Array2<f64>,
    pub grid: SpectralGrid,
    pub width: usize,
    pub height: usize,
}

impl SpectroscopicImage {
    pub fn zeros(grid: SpectralGrid, width: usize, height: usize) -> Self {
        let q = grid.len();
        SpectroscopicImage {
            values: Array2::zeros((q, width * height)),
            grid,
            width,
            height,
        }
    }

    pub fn from_values(
        values: Array2<f64>,
        grid: SpectralGrid,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if values.nrows() != grid.len() {
            return Err(Error::config(format!(
                "image has {} spectral rows but grid has {} nodes",
                values.nrows(),
                grid.len()
            )));
        }
        if values.ncols() != width * height {
            return Err(Error::config(format!(
                "image has {} voxels but width*height = {}",
                values.ncols(),
                width * height
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("image contains non-finite values"));
        }
        Ok(SpectroscopicImage {
            values,
            grid,
            width,
            height,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.values.ncols()
    }

    /// Flat voxel index for spatial coordinates (x, y), row-major.
    pub fn voxel_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_rel(got: f64, want: f64, tol: f64) {
        let denom = want.abs().max(1e-300);
        assert!(
            ((got - want) / denom).abs() < tol,
            "got {got}, want {want} (rel tol {tol})"
        );
    }

    #[test]
    fn kernel_t2_values() {
        assert_eq!(kernel_t2(0.0, 100.0).unwrap(), 1.0);
        assert_rel(kernel_t2(100.0, 100.0).unwrap(), (-1.0f64).exp(), 1e-15);
        // Closed-form scalar evaluation of exp(-217.5/70).
        assert_rel(kernel_t2(217.5, 70.0).unwrap(), (-217.5f64 / 70.0).exp(), 1e-15);
        assert_rel(kernel_t2(217.5, 70.0).unwrap(), 0.0447286, 2e-6);
        assert!(kernel_t2(10.0, 0.0).is_err());
        assert!(kernel_t2(10.0, -5.0).is_err());
        assert!(kernel_t2(-1.0, 5.0).is_err());
    }

    #[test]
    fn kernel_t1_values() {
        assert_eq!(kernel_t1(0.0, 750.0).unwrap(), -1.0);
        // Null point at ti = t1·ln 2.
        let t1 = 812.5;
        assert!(kernel_t1(t1 * std::f64::consts::LN_2, t1).unwrap().abs() < 1e-15);
        assert_rel(
            kernel_t1(2000.0, 1000.0).unwrap(),
            1.0 - 2.0 * (-2.0f64).exp(),
            1e-15,
        );
        assert_rel(kernel_t1(2000.0, 1000.0).unwrap(), 0.729329, 2e-6);
        assert!(kernel_t1(10.0, 0.0).is_err());
    }

    #[test]
    fn kernel_t1t2_separates() {
        let enc = ContrastEncoding::inversion_recovery(7.5, 0.0);
        assert_rel(
            kernel_t1t2(&enc, 750.0, 70.0).unwrap(),
            -(-7.5f64 / 70.0).exp(),
            1e-15,
        );
        assert_rel(kernel_t1t2(&enc, 750.0, 70.0).unwrap(), -0.898397, 1e-6);
        let origin = ContrastEncoding::inversion_recovery(0.0, 0.0);
        assert_eq!(kernel_t1t2(&origin, 500.0, 50.0).unwrap(), -1.0);
        // Null point independent of te.
        let t1 = 640.0;
        let enc = ContrastEncoding::inversion_recovery(33.0, t1 * std::f64::consts::LN_2);
        assert!(kernel_t1t2(&enc, t1, 90.0).unwrap().abs() < 1e-15);
        // Product identity on a sampled grid.
        for &te in &[0.0, 5.0, 50.0, 300.0] {
            for &ti in &[0.0, 120.0, 900.0] {
                for &t1 in &[300.0, 800.0, 2500.0] {
                    for &t2 in &[10.0, 80.0, 200.0] {
                        let enc = ContrastEncoding::inversion_recovery(te, ti);
                        let joint = kernel_t1t2(&enc, t1, t2).unwrap();
                        let split = kernel_t1(ti, t1).unwrap() * kernel_t2(te, t2).unwrap();
                        assert_eq!(joint, split);
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_monotonicity() {
        // kernel_t2 strictly decreasing in te, increasing in t2 (te > 0).
        let tes = log_grid(1.0, 400.0, 20).unwrap();
        for w in tes.windows(2) {
            assert!(kernel_t2(w[1], 80.0).unwrap() < kernel_t2(w[0], 80.0).unwrap());
        }
        let t2s = log_grid(5.0, 400.0, 20).unwrap();
        for w in t2s.windows(2) {
            assert!(kernel_t2(50.0, w[1]).unwrap() > kernel_t2(50.0, w[0]).unwrap());
        }
        // kernel_t1 strictly increasing in ti, range within [-1, 1).
        let tis = log_grid(1.0, 5000.0, 30).unwrap();
        let mut prev = kernel_t1(0.0, 700.0).unwrap();
        assert_eq!(prev, -1.0);
        for &ti in &tis {
            let v = kernel_t1(ti, 700.0).unwrap();
            assert!(v > prev);
            assert!((-1.0..1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn log_grid_examples() {
        let g = log_grid(2.0, 300.0, 100).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 2.0);
        assert_eq!(g[99], 300.0);
        let g = log_grid(1.0, 100.0, 3).unwrap();
        assert_rel(g[1], 10.0, 1e-12);
        // Constant ratio between consecutive nodes.
        let g = log_grid(100.0, 3000.0, 100).unwrap();
        let want = 30.0f64.powf(1.0 / 99.0);
        for w in g.windows(2) {
            assert_rel(w[1] / w[0], want, 1e-10);
        }
        assert!(log_grid(0.0, 10.0, 5).is_err());
        assert!(log_grid(10.0, 10.0, 5).is_err());
        assert!(log_grid(1.0, 10.0, 1).is_err());
    }

    #[test]
    fn quadrature_weight_examples() {
        let e = std::f64::consts::E;
        let w = quadrature_weights(&[1.0, e, e * e]).unwrap();
        assert_rel(w[0], 0.5, 1e-12);
        assert_rel(w[1], 1.0, 1e-12);
        assert_rel(w[2], 0.5, 1e-12);
        // Geometric grid: all interior weights equal ln r.
        let nodes = log_grid(2.0, 300.0, 40).unwrap();
        let r = nodes[1] / nodes[0];
        let w = quadrature_weights(&nodes).unwrap();
        for k in 1..39 {
            assert_rel(w[k], r.ln(), 1e-9);
        }
        assert_eq!(quadrature_weights(&[42.0]).unwrap(), vec![1.0]);
        assert!(quadrature_weights(&[]).is_err());
        assert!(quadrature_weights(&[2.0, 1.0]).is_err());
        assert!(quadrature_weights(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn schedule_validation() {
        let ok = vec![
            ContrastEncoding::inversion_recovery(7.5, 0.0),
            ContrastEncoding::inversion_recovery(7.5, 100.0),
            ContrastEncoding::spin_echo(7.5),
        ];
        validate_schedule(&ok).unwrap();
        let dup = vec![
            ContrastEncoding::inversion_recovery(7.5, 0.0),
            ContrastEncoding::inversion_recovery(7.5, 0.0),
        ];
        assert!(validate_schedule(&dup).is_err());
        assert!(validate_schedule(&[]).is_err());
        assert!(validate_schedule(&[ContrastEncoding::spin_echo(-3.0)]).is_err());
    }

    #[test]
    fn grid_weights_are_outer_products() {
        let t1 = log_grid(100.0, 3000.0, 5).unwrap();
        let t2 = log_grid(2.0, 300.0, 4).unwrap();
        let grid = SpectralGrid::new(t1.clone(), t2.clone()).unwrap();
        let w1 = quadrature_weights(&t1).unwrap();
        let w2 = quadrature_weights(&t2).unwrap();
        assert_eq!(grid.len(), 20);
        for i1 in 0..5 {
            for i2 in 0..4 {
                let q = grid.index_of(i1, i2);
                assert_eq!(grid.weights()[q], w1[i1] * w2[i2]);
                let (a, b) = grid.node(q);
                assert_eq!(a, t1[i1]);
                assert_eq!(b, t2[i2]);
            }
        }
    }

    #[test]
    fn dictionary_matches_scalar_kernels() {
        // Hand-checkable 2x3 kernel against entrywise scalar calls.
        let schedule = vec![
            ContrastEncoding::inversion_recovery(0.0, 0.0),
            ContrastEncoding::inversion_recovery(40.0, 500.0),
        ];
        let grid = SpectralGrid::new(vec![600.0, 900.0], vec![50.0, 80.0, 120.0]).unwrap();
        // 2x2 t1 axis x 3 t2 axis would be Q=6; use full grid.
        let dict = build_dictionary(&schedule, &grid, KernelMode::T1T2).unwrap();
        assert_eq!(dict.kernel().dim(), (2, 6));
        for p in 0..2 {
            for q in 0..6 {
                let (t1, t2) = grid.node(q);
                let want = grid.weights()[q] * kernel_t1t2(&schedule[p], t1, t2).unwrap();
                assert_eq!(dict.kernel()[(p, q)], want);
                assert!(dict.kernel()[(p, q)].abs() <= grid.weights()[q] + 1e-15);
            }
        }
    }

    #[test]
    fn dictionary_single_encoding_at_origin() {
        let schedule = vec![ContrastEncoding::inversion_recovery(0.0, 0.0)];
        let grid = SpectralGrid::from_parts(
            vec![500.0, 1000.0],
            vec![50.0, 100.0],
            vec![1.0; 4],
        )
        .unwrap();
        let dict = build_dictionary(&schedule, &grid, KernelMode::T1T2).unwrap();
        for q in 0..4 {
            assert_eq!(dict.kernel()[(0, q)], -1.0);
        }
    }

    #[test]
    fn dictionary_1d_modes() {
        let t2_grid = SpectralGrid::t2_only(log_grid(10.0, 200.0, 6).unwrap()).unwrap();
        let schedule: Vec<_> = (1..=5).map(|k| ContrastEncoding::spin_echo(10.0 * k as f64)).collect();
        let dict = build_dictionary(&schedule, &t2_grid, KernelMode::T2Only).unwrap();
        for p in 0..5 {
            for q in 0..6 {
                let (_, t2) = t2_grid.node(q);
                let want = t2_grid.weights()[q] * kernel_t2(schedule[p].te_ms, t2).unwrap();
                assert_eq!(dict.kernel()[(p, q)], want);
            }
        }

        let t1_grid = SpectralGrid::t1_only(log_grid(100.0, 3000.0, 6).unwrap()).unwrap();
        let schedule: Vec<_> = [0.0, 100.0, 400.0]
            .iter()
            .map(|&ti| ContrastEncoding::inversion_recovery(0.0, ti))
            .collect();
        let dict = build_dictionary(&schedule, &t1_grid, KernelMode::T1Only).unwrap();
        for p in 0..3 {
            for q in 0..6 {
                let (t1, _) = t1_grid.node(q);
                let want = t1_grid.weights()[q] * kernel_t1(schedule[p].ti_ms.unwrap(), t1).unwrap();
                assert_eq!(dict.kernel()[(p, q)], want);
            }
        }
    }

    #[test]
    fn dictionary_mode_grid_mismatch() {
        let grid2d = SpectralGrid::new(
            log_grid(100.0, 3000.0, 3).unwrap(),
            log_grid(2.0, 300.0, 3).unwrap(),
        )
        .unwrap();
        let se = vec![ContrastEncoding::spin_echo(10.0)];
        assert!(build_dictionary(&se, &grid2d, KernelMode::T2Only).is_err());
        // T1T2 mode needs TI on every encoding.
        assert!(build_dictionary(&se, &grid2d, KernelMode::T1T2).is_err());
        let t1_grid = SpectralGrid::t1_only(vec![500.0, 1000.0]).unwrap();
        assert!(build_dictionary(&se, &t1_grid, KernelMode::T1T2).is_err());
    }

    #[test]
    fn dictionary_is_deterministic() {
        let schedule: Vec<_> = [0.0, 100.0, 700.0]
            .iter()
            .flat_map(|&ti| {
                (1..=4).map(move |k| ContrastEncoding::inversion_recovery(15.0 * k as f64, ti))
            })
            .collect();
        let grid = SpectralGrid::new(
            log_grid(100.0, 3000.0, 7).unwrap(),
            log_grid(2.0, 300.0, 9).unwrap(),
        )
        .unwrap();
        let a = build_dictionary(&schedule, &grid, KernelMode::T1T2).unwrap();
        let b = build_dictionary(&schedule, &grid, KernelMode::T1T2).unwrap();
        assert_eq!(a.kernel(), b.kernel());
    }
}
