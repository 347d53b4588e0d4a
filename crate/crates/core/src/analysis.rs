//! Post-processing of spectroscopic images: spatially averaged spectra,
//! automated spectral peak detection, quadrature-weighted region integration
//! into spatial compartment maps, and the TI=0 polarity/scale correction for
//! inversion-recovery acquisitions where the TI=0 images are acquired without
//! an inversion pulse and stored with an unknown scanner scale factor.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{SpectralGrid, SpectroscopicImage};
use crate::phantom::MeasuredDataset;

/// An axis-aligned box in (T1, T2) space, in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRegion {
    pub label: String,
    pub t1_range: (f64, f64),
    pub t2_range: (f64, f64),
}

impl SpectralRegion {
    pub fn new(label: impl Into<String>, t1_range: (f64, f64), t2_range: (f64, f64)) -> Result<Self> {
        if !(t1_range.0 < t1_range.1) || !(t2_range.0 < t2_range.1) {
            return Err(Error::config(format!(
                "region ranges must satisfy min < max, got T1 {t1_range:?} T2 {t2_range:?}"
            )));
        }
        Ok(SpectralRegion {
            label: label.into(),
            t1_range,
            t2_range,
        })
    }
}

/// One detected spectral peak: its grid-node location, height, and the
/// surrounding integration region.
#[derive(Debug, Clone)]
pub struct Peak {
    pub t1_ms: f64,
    pub t2_ms: f64,
    pub height: f64,
    pub region: SpectralRegion,
}

#[derive(Debug, Clone, Default)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
}

/// Entrywise mean spectrum over voxels with mask 1.
pub fn mean_spectrum(image: &SpectroscopicImage, mask: &[u8]) -> Result<Vec<f64>> {
    if mask.len() != image.voxel_count() {
        return Err(Error::config(format!(
            "mean_spectrum: mask has {} entries for {} voxels",
            mask.len(),
            image.voxel_count()
        )));
    }
    let members: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| (t == 1).then_some(i))
        .collect();
    if members.is_empty() {
        return Err(Error::data("mean_spectrum: mask is empty"));
    }
    let q = image.grid.len();
    let mut mean = vec![0.0; q];
    for (qq, row) in image.values.rows().into_iter().enumerate() {
        let slice = row.as_slice().expect("contiguous row");
        let sum: f64 = members.iter().map(|&i| slice[i]).sum();
        mean[qq] = sum / members.len() as f64;
    }
    Ok(mean)
}

/// Half-log-step box bounds around an inclusive index range on one grid axis,
/// so that integration over the box captures exactly the nodes `lo..=hi`.
fn axis_box(values: &[f64], lo: usize, hi: usize) -> (f64, f64) {
    let n = values.len();
    if n == 1 {
        return (values[0] * 0.5, values[0] * 2.0);
    }
    let below = if lo == 0 {
        values[0] * (values[0] / values[1]).sqrt()
    } else {
        (values[lo - 1] * values[lo]).sqrt()
    };
    let above = if hi == n - 1 {
        values[n - 1] * (values[n - 1] / values[n - 2]).sqrt()
    } else {
        (values[hi] * values[hi + 1]).sqrt()
    };
    (below, above)
}

/// Walk outward from `start` along one axis line while the spectrum is
/// non-increasing; returns the index of the valley (last position before the
/// values rise again), clipped to the grid edge.
fn walk_to_valley<F: Fn(usize) -> f64>(start: usize, len: usize, forward: bool, value: F) -> usize {
    let mut cur = start;
    loop {
        let next = if forward {
            if cur + 1 >= len {
                return cur;
            }
            cur + 1
        } else {
            if cur == 0 {
                return cur;
            }
            cur - 1
        };
        if value(next) <= value(cur) {
            cur = next;
        } else {
            return cur;
        }
    }
}

/// Detect local maxima of a spectrum over the 8-connected grid neighborhood.
///
/// Candidates below `min_height_frac` of the global maximum are dropped, and
/// the survivors are greedily pruned (tallest first) so retained peaks are at
/// least `min_separation` apart in log10 distance. Each peak's region extends
/// along both axes to the surrounding valleys.
pub fn detect_peaks(
    spectrum: &[f64],
    grid: &SpectralGrid,
    min_height_frac: f64,
    min_separation: f64,
) -> Result<PeakSet> {
    if !(min_height_frac > 0.0 && min_height_frac < 1.0) {
        return Err(Error::domain(format!(
            "min_height_frac must be in (0, 1), got {min_height_frac}"
        )));
    }
    if !(min_separation >= 0.0) {
        return Err(Error::domain("min_separation must be >= 0"));
    }
    if spectrum.len() != grid.len() {
        return Err(Error::config(format!(
            "spectrum has {} entries for a grid of {}",
            spectrum.len(),
            grid.len()
        )));
    }
    let q1 = grid.t1_count();
    let q2 = grid.t2_count();
    let max_val = spectrum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max_val > 0.0) {
        return Ok(PeakSet::default());
    }
    let threshold = min_height_frac * max_val;

    let at = |i1: usize, i2: usize| spectrum[i1 * q2 + i2];
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for i1 in 0..q1 {
        for i2 in 0..q2 {
            let v = at(i1, i2);
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for d1 in -1i64..=1 {
                for d2 in -1i64..=1 {
                    if d1 == 0 && d2 == 0 {
                        continue;
                    }
                    let j1 = i1 as i64 + d1;
                    let j2 = i2 as i64 + d2;
                    if j1 < 0 || j1 >= q1 as i64 || j2 < 0 || j2 >= q2 as i64 {
                        continue;
                    }
                    if at(j1 as usize, j2 as usize) >= v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((i1, i2, v));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then((a.0, a.1).cmp(&(b.0, b.1)))
    });

    let mut accepted: Vec<(usize, usize, f64)> = Vec::new();
    for &(i1, i2, v) in &candidates {
        let far_enough = accepted.iter().all(|&(a1, a2, _)| {
            let mut d2 = 0.0;
            if !grid.is_t1_collapsed() {
                let d = grid.t1_values()[i1].log10() - grid.t1_values()[a1].log10();
                d2 += d * d;
            }
            if !grid.is_t2_collapsed() {
                let d = grid.t2_values()[i2].log10() - grid.t2_values()[a2].log10();
                d2 += d * d;
            }
            d2.sqrt() >= min_separation
        });
        if far_enough {
            accepted.push((i1, i2, v));
        }
    }

    let mut peaks = Vec::with_capacity(accepted.len());
    for (idx, &(i1, i2, v)) in accepted.iter().enumerate() {
        let lo1 = walk_to_valley(i1, q1, false, |j| at(j, i2));
        let hi1 = walk_to_valley(i1, q1, true, |j| at(j, i2));
        let lo2 = walk_to_valley(i2, q2, false, |j| at(i1, j));
        let hi2 = walk_to_valley(i2, q2, true, |j| at(i1, j));
        let t1_range = axis_box(grid.t1_values(), lo1, hi1);
        let t2_range = axis_box(grid.t2_values(), lo2, hi2);
        peaks.push(Peak {
            t1_ms: grid.t1_values()[i1],
            t2_ms: grid.t2_values()[i2],
            height: v,
            region: SpectralRegion::new(format!("peak{}", idx + 1), t1_range, t2_range)?,
        });
    }
    Ok(PeakSet { peaks })
}

/// Flat indices of grid nodes falling inside a region box (inclusive).
pub fn region_node_indices(grid: &SpectralGrid, region: &SpectralRegion) -> Vec<usize> {
    let mut nodes = Vec::new();
    for q in 0..grid.len() {
        let (t1, t2) = grid.node(q);
        if t1 >= region.t1_range.0
            && t1 <= region.t1_range.1
            && t2 >= region.t2_range.0
            && t2 <= region.t2_range.1
        {
            nodes.push(q);
        }
    }
    nodes
}

/// Quadrature-weighted integral of each voxel's spectrum over a region,
/// returned as a height x width spatial map. An empty intersection yields a
/// zero map (callers may warn via [`region_node_indices`]).
pub fn integrate_region(image: &SpectroscopicImage, region: &SpectralRegion) -> Result<Array2<f64>> {
    let nodes = region_node_indices(&image.grid, region);
    let mut map = Array2::<f64>::zeros((image.height, image.width));
    if nodes.is_empty() {
        return Ok(map);
    }
    let weights = image.grid.weights();
    for &q in &nodes {
        let row = image.values.row(q);
        let slice = row.as_slice().expect("contiguous row");
        let w = weights[q];
        for y in 0..image.height {
            for x in 0..image.width {
                map[(y, x)] += w * slice[y * image.width + x];
            }
        }
    }
    Ok(map)
}

/// Negate all rows acquired at TI = 0: magnitude images at TI = 0 correspond
/// to negative longitudinal polarity under the inversion-recovery kernel.
/// Applying it twice returns the original dataset.
pub fn signed_ti0(ds: &MeasuredDataset) -> MeasuredDataset {
    let mut out = ds.clone();
    for (p, enc) in ds.schedule.iter().enumerate() {
        if enc.ti_ms == Some(0.0) {
            for v in out.data.row_mut(p).iter_mut() {
                *v = -*v;
            }
        }
    }
    out
}

/// Three-parameter inversion-recovery fit `s(TI) = A - B·exp(-TI/T1)`.
#[derive(Debug, Clone, Copy)]
pub struct IrFit {
    pub a: f64,
    pub b: f64,
    pub t1_ms: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl IrFit {
    /// Model value at a given inversion time.
    pub fn eval(&self, ti: f64) -> f64 {
        self.a - self.b * (-ti / self.t1_ms).exp()
    }
}

/// Fit the monoexponential inversion-recovery model to `(ti, y)` samples by
/// log-linear initialization followed by damped Gauss-Newton (Levenberg
/// style), with relative tolerance 1e-8 and at most 100 iterations.
pub fn fit_ir_monoexponential(ti: &[f64], y: &[f64]) -> Result<IrFit> {
    if ti.len() != y.len() {
        return Err(Error::config("fit: ti and y lengths differ"));
    }
    if ti.len() < 3 {
        return Err(Error::data(format!(
            "fit: need at least 3 samples, got {}",
            ti.len()
        )));
    }

    let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = (y_max - y_min).max(1e-12 * y_max.abs().max(1.0));
    let a0 = y_max + 0.05 * spread;

    // Log-linearize ln(A - y) = ln B - TI/T1.
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let n = ti.len() as f64;
    for (&t, &v) in ti.iter().zip(y.iter()) {
        let l = (a0 - v).max(1e-12 * spread).ln();
        sx += t;
        sy += l;
        sxx += t * t;
        sxy += t * l;
    }
    let denom = n * sxx - sx * sx;
    let (mut b, mut t1) = if denom.abs() > 0.0 {
        let slope = (n * sxy - sx * sy) / denom;
        let intercept = (sy - slope * sx) / n;
        if slope < 0.0 {
            (intercept.exp(), -1.0 / slope)
        } else {
            (spread, ti.iter().sum::<f64>() / n)
        }
    } else {
        (spread, ti.iter().sum::<f64>() / n)
    };
    let mut a = a0;
    if !(t1 > 0.0) || !t1.is_finite() {
        t1 = ti.iter().sum::<f64>() / n;
    }

    let cost = |a: f64, b: f64, t1: f64| -> f64 {
        ti.iter()
            .zip(y.iter())
            .map(|(&t, &v)| {
                let r = a - b * (-t / t1).exp() - v;
                r * r
            })
            .sum()
    };

    let mut nu = 1e-3;
    let mut c = cost(a, b, t1);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..100 {
        iterations = it + 1;
        // Normal equations for the damped Gauss-Newton step.
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&t, &v) in ti.iter().zip(y.iter()) {
            let e = (-t / t1).exp();
            let r = a - b * e - v;
            let jrow = [1.0, -e, -b * e * t / (t1 * t1)];
            for i in 0..3 {
                jtr[i] += jrow[i] * r;
                for j in 0..3 {
                    jtj[i][j] += jrow[i] * jrow[j];
                }
            }
        }

        let mut improved = false;
        for _ in 0..25 {
            let mut m = jtj;
            for i in 0..3 {
                m[i][i] += nu * jtj[i][i].max(1e-30);
            }
            if let Some(delta) = solve3(&m, &[-jtr[0], -jtr[1], -jtr[2]]) {
                let (na, nb, nt1) = (a + delta[0], b + delta[1], t1 + delta[2]);
                if nt1 > 0.0 && nt1.is_finite() {
                    let nc = cost(na, nb, nt1);
                    if nc.is_finite() && nc < c {
                        let rel_drop = (c - nc) / c.max(1e-300);
                        a = na;
                        b = nb;
                        t1 = nt1;
                        c = nc;
                        nu = (nu / 3.0).max(1e-12);
                        improved = true;
                        if rel_drop < 1e-8 {
                            converged = true;
                        }
                        break;
                    }
                }
            }
            nu *= 10.0;
            if nu > 1e12 {
                break;
            }
        }
        if converged {
            break;
        }
        if !improved {
            // Stationary (or stuck): call it converged if the damping blew up
            // from an already tiny gradient.
            let g_norm: f64 = jtr.iter().map(|v| v * v).sum::<f64>().sqrt();
            converged = g_norm <= 1e-10 * c.max(1.0);
            break;
        }
    }

    Ok(IrFit {
        a,
        b,
        t1_ms: t1,
        converged,
        iterations,
    })
}

fn solve3(m: &[[f64; 3]; 3], rhs: &[f64; 3]) -> Option<[f64; 3]> {
    // Gaussian elimination with partial pivoting on a 3x3 system.
    let mut a = *m;
    let mut b = *rhs;
    for k in 0..3 {
        let mut piv = k;
        for i in (k + 1)..3 {
            if a[i][k].abs() > a[piv][k].abs() {
                piv = i;
            }
        }
        if a[piv][k] == 0.0 {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in (k + 1)..3 {
            let f = a[i][k] / a[k][k];
            for j in k..3 {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = [0.0; 3];
    for k in (0..3).rev() {
        let mut s = b[k];
        for j in (k + 1)..3 {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// How voxelwise scale factors are aggregated into the global correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleAggregate {
    #[default]
    Mean,
    Median,
}

/// Result of the TI=0 scale correction.
#[derive(Debug, Clone)]
pub struct ScaleCorrection {
    pub dataset: MeasuredDataset,
    pub global_scale: f64,
    /// Per-voxel scale factor; `None` for voxels outside the mask or excluded
    /// because their fit diverged.
    pub voxel_scales: Vec<Option<f64>>,
    pub excluded: usize,
}

/// Estimate and remove the unknown scale factor of the TI=0 images.
///
/// Per masked voxel, a monoexponential inversion-recovery curve is fitted to
/// the TI>0 samples at the shortest echo time that carries a TI=0 encoding;
/// the fitted curve synthesizes the expected TI=0 value, and the ratio of
/// measured to synthesized gives that voxel's scale. The aggregated global
/// scale then divides every TI=0 row. Expects signed data (see [`signed_ti0`]).
pub fn scale_correct_ti0(
    ds: &MeasuredDataset,
    aggregate: ScaleAggregate,
) -> Result<ScaleCorrection> {
    // Echo times that have a TI=0 encoding, shortest first.
    let mut te0: Vec<(usize, f64)> = ds
        .schedule
        .iter()
        .enumerate()
        .filter(|(_, e)| e.ti_ms == Some(0.0))
        .map(|(p, e)| (p, e.te_ms))
        .collect();
    if te0.is_empty() {
        return Err(Error::data("scale correction requires TI=0 encodings"));
    }
    te0.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());

    // Pick the shortest such TE with >= 3 distinct positive TIs available.
    let mut chosen: Option<(usize, f64, Vec<usize>)> = None;
    for &(p0, te) in &te0 {
        let mut rows: Vec<usize> = ds
            .schedule
            .iter()
            .enumerate()
            .filter(|(_, e)| e.te_ms == te && matches!(e.ti_ms, Some(ti) if ti > 0.0))
            .map(|(p, _)| p)
            .collect();
        rows.sort_by(|&a, &b| {
            ds.schedule[a]
                .ti_ms
                .partial_cmp(&ds.schedule[b].ti_ms)
                .unwrap()
        });
        let mut distinct = rows
            .iter()
            .map(|&p| ds.schedule[p].ti_ms.unwrap().to_bits())
            .collect::<Vec<_>>();
        distinct.dedup();
        if distinct.len() >= 3 {
            chosen = Some((p0, te, rows));
            break;
        }
    }
    let Some((row_ti0, _te, fit_rows)) = chosen else {
        return Err(Error::data(
            "scale correction requires >= 3 distinct TI>0 encodings at an echo time that also has TI=0",
        ));
    };
    let tis: Vec<f64> = fit_rows.iter().map(|&p| ds.schedule[p].ti_ms.unwrap()).collect();

    let n = ds.voxel_count();
    let voxel_scales: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if ds.mask[i] != 1 {
                return None;
            }
            let y: Vec<f64> = fit_rows.iter().map(|&p| ds.data[(p, i)]).collect();
            let fit = fit_ir_monoexponential(&tis, &y).ok()?;
            if !fit.converged {
                return None;
            }
            let synth0 = fit.a - fit.b;
            let y_scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if !synth0.is_finite() || synth0.abs() <= 1e-9 * y_scale.max(1e-300) {
                return None;
            }
            let scale = ds.data[(row_ti0, i)] / synth0;
            scale.is_finite().then_some(scale)
        })
        .collect();

    let included: Vec<f64> = voxel_scales.iter().filter_map(|s| *s).collect();
    let masked_count = ds.mask.iter().filter(|&&t| t == 1).count();
    let excluded = masked_count - included.len();
    if included.is_empty() {
        return Err(Error::numerical(
            "scale correction failed: every masked voxel was excluded from the fit",
        ));
    }
    let global_scale = match aggregate {
        ScaleAggregate::Mean => included.iter().sum::<f64>() / included.len() as f64,
        ScaleAggregate::Median => {
            let mut v = included.clone();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = v.len() / 2;
            if v.len() % 2 == 1 {
                v[m]
            } else {
                0.5 * (v[m - 1] + v[m])
            }
        }
    };
    if !global_scale.is_finite() || global_scale == 0.0 {
        return Err(Error::numerical(format!(
            "scale correction produced an unusable global scale {global_scale}"
        )));
    }

    let mut corrected = ds.clone();
    for (p, enc) in ds.schedule.iter().enumerate() {
        if enc.ti_ms == Some(0.0) {
            for v in corrected.data.row_mut(p).iter_mut() {
                *v /= global_scale;
            }
        }
    }
    Ok(ScaleCorrection {
        dataset: corrected,
        global_scale,
        voxel_scales,
        excluded,
    })
}
