//! Cramér-Rao lower bounds for multi-compartment exponential-decay models.
//!
//! Under white Gaussian noise the Fisher information for the unknown
//! parameters is `F = (averages / sigma^2) * Jᵀ J`, where `J` is the Jacobian
//! of the noiseless signal with respect to the parameters. The CRLB is the
//! diagonal of `F⁻¹`; its square root bounds the standard deviation of any
//! unbiased estimator. Protocols are compared through ratios of these bounds.
//!
//! Two parameterizations are supported for multi-voxel analyses: independent
//! per-voxel parameters (block-diagonal Fisher matrix) and shared relaxation
//! parameters with per-voxel amplitudes.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg_svd::jacobi_svd;
use crate::model::{CompartmentModel, ContrastEncoding, KernelMode};

/// Parameter sharing across voxels in a joint analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharing {
    PerVoxel,
    SharedRelaxation,
}

/// An estimation experiment: per-voxel compartment models, the encoding
/// schedule, the noise level, the per-encoding repetition count, the modeled
/// relaxation axes, and the sharing structure.
#[derive(Debug, Clone)]
pub struct FisherSpec {
    pub voxels: Vec<CompartmentModel>,
    pub schedule: Vec<ContrastEncoding>,
    pub sigma: f64,
    pub averages: u32,
    pub mode: KernelMode,
    pub sharing: Sharing,
}

impl FisherSpec {
    /// Single-voxel experiment.
    pub fn single(
        model: CompartmentModel,
        schedule: Vec<ContrastEncoding>,
        sigma: f64,
        averages: u32,
        mode: KernelMode,
    ) -> Self {
        FisherSpec {
            voxels: vec![model],
            schedule,
            sigma,
            averages,
            mode,
            sharing: Sharing::PerVoxel,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.voxels.is_empty() {
            return Err(Error::config("fisher spec needs at least one voxel"));
        }
        if self.schedule.is_empty() {
            return Err(Error::config("fisher spec needs a nonempty schedule"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.averages < 1 {
            return Err(Error::domain("averages must be >= 1"));
        }
        let s = self.voxels[0].len();
        for (v, model) in self.voxels.iter().enumerate() {
            if model.len() != s {
                return Err(Error::config(format!(
                    "voxel {v} has {} compartments, expected {s}",
                    model.len()
                )));
            }
        }
        if self.sharing == Sharing::SharedRelaxation {
            if self.voxels.len() < 2 {
                return Err(Error::config(
                    "shared-relaxation analysis requires at least 2 voxels",
                ));
            }
            let first = &self.voxels[0];
            for (v, model) in self.voxels.iter().enumerate().skip(1) {
                for (s, (a, b)) in first
                    .compartments
                    .iter()
                    .zip(model.compartments.iter())
                    .enumerate()
                {
                    if a.t1_ms != b.t1_ms || a.t2_ms != b.t2_ms {
                        return Err(Error::config(format!(
                            "shared-relaxation requires identical relaxation times; voxel {v} compartment {s} differs"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// CRLB evaluation result: variance bounds and their square roots per
/// parameter, plus the Fisher-matrix condition number.
#[derive(Debug, Clone)]
pub struct CrlbResult {
    pub parameter_names: Vec<String>,
    pub crlb: Vec<f64>,
    pub std_bound: Vec<f64>,
    pub fisher_condition: f64,
}

impl CrlbResult {
    pub fn std_bound_for(&self, name: &str) -> Option<f64> {
        self.parameter_names
            .iter()
            .position(|n| n == name)
            .map(|k| self.std_bound[k])
    }
}

/// Number of parameters per compartment for a mode.
fn params_per_compartment(mode: KernelMode) -> usize {
    match mode {
        KernelMode::T1T2 => 3,
        KernelMode::T1Only | KernelMode::T2Only => 2,
    }
}

/// Parameter labels for one voxel, compartment-major: `f[s]`, then the
/// relaxation parameters the mode estimates.
fn voxel_labels(compartments: usize, mode: KernelMode, prefix: &str) -> Vec<String> {
    let mut labels = Vec::new();
    for s in 1..=compartments {
        labels.push(format!("{prefix}f[{s}]"));
        match mode {
            KernelMode::T1T2 => {
                labels.push(format!("{prefix}T1[{s}]"));
                labels.push(format!("{prefix}T2[{s}]"));
            }
            KernelMode::T1Only => labels.push(format!("{prefix}T1[{s}]")),
            KernelMode::T2Only => labels.push(format!("{prefix}T2[{s}]")),
        }
    }
    labels
}

/// Analytic Jacobian of the noiseless signal with respect to the model
/// parameters, one row per encoding. Column order is compartment-major:
/// `(f, T1, T2)` for the joint mode, `(f, T1)` or `(f, T2)` for 1D modes.
pub fn jacobian(
    model: &CompartmentModel,
    schedule: &[ContrastEncoding],
    mode: KernelMode,
) -> Array2<f64> {
    let s_count = model.len();
    let k = params_per_compartment(mode) * s_count;
    let mut j = Array2::<f64>::zeros((schedule.len(), k));
    for (p, enc) in schedule.iter().enumerate() {
        for (s, comp) in model.compartments.iter().enumerate() {
            let te = enc.te_ms;
            let ti = enc.ti_ms;
            // Inversion factor and its T1 derivative (zero without a pulse).
            let (k1, dk1_dt1) = match (mode, ti) {
                (KernelMode::T2Only, _) => (1.0, 0.0),
                (_, Some(ti)) => {
                    let e = (-ti / comp.t1_ms).exp();
                    (1.0 - 2.0 * e, -2.0 * e * ti / (comp.t1_ms * comp.t1_ms))
                }
                (_, None) => (1.0, 0.0),
            };
            let (k2, dk2_dt2) = match mode {
                KernelMode::T1Only => (1.0, 0.0),
                _ => {
                    let e = (-te / comp.t2_ms).exp();
                    (e, e * te / (comp.t2_ms * comp.t2_ms))
                }
            };
            let base = params_per_compartment(mode) * s;
            j[(p, base)] = k1 * k2;
            match mode {
                KernelMode::T1T2 => {
                    j[(p, base + 1)] = comp.amplitude * dk1_dt1 * k2;
                    j[(p, base + 2)] = comp.amplitude * k1 * dk2_dt2;
                }
                KernelMode::T1Only => {
                    j[(p, base + 1)] = comp.amplitude * dk1_dt1;
                }
                KernelMode::T2Only => {
                    j[(p, base + 1)] = comp.amplitude * dk2_dt2;
                }
            }
        }
    }
    j
}

/// Parameter labels for a spec, matching the Fisher-matrix column order.
pub fn parameter_labels(spec: &FisherSpec) -> Result<Vec<String>> {
    spec.validate()?;
    let s_count = spec.voxels[0].len();
    match (spec.sharing, spec.voxels.len()) {
        (Sharing::PerVoxel, 1) => Ok(voxel_labels(s_count, spec.mode, "")),
        (Sharing::PerVoxel, _) => {
            let mut labels = Vec::new();
            for v in 1..=spec.voxels.len() {
                labels.extend(voxel_labels(s_count, spec.mode, &format!("v{v}.")));
            }
            Ok(labels)
        }
        (Sharing::SharedRelaxation, _) => {
            let mut labels = Vec::new();
            for s in 1..=s_count {
                match spec.mode {
                    KernelMode::T1T2 => {
                        labels.push(format!("T1[{s}]"));
                        labels.push(format!("T2[{s}]"));
                    }
                    KernelMode::T1Only => labels.push(format!("T1[{s}]")),
                    KernelMode::T2Only => labels.push(format!("T2[{s}]")),
                }
            }
            for v in 1..=spec.voxels.len() {
                for s in 1..=s_count {
                    labels.push(format!("v{v}.f[{s}]"));
                }
            }
            Ok(labels)
        }
    }
}

/// Stacked Jacobian over all voxels with the spec's sharing structure.
fn assemble_jacobian(spec: &FisherSpec) -> Array2<f64> {
    let p = spec.schedule.len();
    let v_count = spec.voxels.len();
    let s_count = spec.voxels[0].len();
    let ppc = params_per_compartment(spec.mode);
    let relax_per_comp = ppc - 1;

    match spec.sharing {
        Sharing::PerVoxel => {
            let k_single = ppc * s_count;
            let mut j = Array2::<f64>::zeros((p * v_count, k_single * v_count));
            for (v, model) in spec.voxels.iter().enumerate() {
                let jv = jacobian(model, &spec.schedule, spec.mode);
                for r in 0..p {
                    for c in 0..k_single {
                        j[(v * p + r, v * k_single + c)] = jv[(r, c)];
                    }
                }
            }
            j
        }
        Sharing::SharedRelaxation => {
            let relax_cols = relax_per_comp * s_count;
            let k_total = relax_cols + v_count * s_count;
            let mut j = Array2::<f64>::zeros((p * v_count, k_total));
            for (v, model) in spec.voxels.iter().enumerate() {
                let jv = jacobian(model, &spec.schedule, spec.mode);
                for r in 0..p {
                    for s in 0..s_count {
                        let base = ppc * s;
                        // Amplitude column for this voxel.
                        j[(v * p + r, relax_cols + v * s_count + s)] = jv[(r, base)];
                        // Relaxation columns are shared across voxels.
                        for d in 0..relax_per_comp {
                            j[(v * p + r, relax_per_comp * s + d)] += jv[(r, base + 1 + d)];
                        }
                    }
                }
            }
            j
        }
    }
}

/// Fisher information matrix `(averages / sigma^2) * Jᵀ J` with the spec's
/// sharing structure.
pub fn fisher_matrix(spec: &FisherSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let j = assemble_jacobian(spec);
    let scale = spec.averages as f64 / (spec.sigma * spec.sigma);
    let mut f = j.t().dot(&j);
    f.mapv_inplace(|x| x * scale);
    Ok(f)
}

/// Default conditioning cap for Fisher-matrix inversion.
pub const DEFAULT_CONDITION_CAP: f64 = 1e14;

/// CRLB per parameter (diagonal of the inverse Fisher matrix) with the
/// default conditioning cap.
pub fn crlb(spec: &FisherSpec) -> Result<CrlbResult> {
    crlb_with_cap(spec, DEFAULT_CONDITION_CAP)
}

/// CRLB per parameter. Fails with a diagnostic naming the dominant null-space
/// parameters if the Fisher matrix condition number exceeds `condition_cap`.
///
/// The inverse-Fisher diagonal is evaluated through the eigendecomposition of
/// `JᵀJ`, computed implicitly by one-sided Jacobi rotations on the stacked
/// Jacobian itself so that the tiny eigenvalues of near-degenerate protocols
/// are resolved at the conditioning of `J` rather than its square.
pub fn crlb_with_cap(spec: &FisherSpec, condition_cap: f64) -> Result<CrlbResult> {
    let labels = parameter_labels(spec)?;
    let j = assemble_jacobian(spec);
    let (sv, v) = jacobi_svd(j);
    let k = sv.len();
    let s_max = sv[0];
    let s_min = sv[k - 1];
    // Eigenvalues of the (unscaled) Gram matrix are the squared singular values.
    let condition = if s_min > 0.0 {
        (s_max / s_min).powi(2)
    } else {
        f64::INFINITY
    };
    if !(s_min > 0.0) || condition > condition_cap {
        // Describe the null-space direction by its largest components.
        let mut weights: Vec<(String, f64)> = labels
            .iter()
            .enumerate()
            .map(|(i, name)| (name.clone(), v[(i, k - 1)]))
            .collect();
        weights.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
        let top: Vec<String> = weights
            .iter()
            .take(3.min(k))
            .map(|(n, w)| format!("{n}: {w:+.3}"))
            .collect();
        return Err(Error::numerical(format!(
            "unidentifiable parameters: Fisher condition {condition:.3e} exceeds cap {condition_cap:.1e}; null-space direction dominated by [{}]",
            top.join(", ")
        )));
    }

    // crlb_i = (sigma^2 / averages) * [ (JᵀJ)⁻¹ ]_ii.
    let noise_scale = spec.sigma * spec.sigma / spec.averages as f64;
    let mut crlb_vals = vec![0.0; k];
    for i in 0..k {
        let mut sum = 0.0;
        for jj in 0..k {
            let w = v[(i, jj)] / sv[jj];
            sum += w * w;
        }
        crlb_vals[i] = noise_scale * sum;
    }
    let std_bound: Vec<f64> = crlb_vals.iter().map(|&v| v.sqrt()).collect();
    Ok(CrlbResult {
        parameter_names: labels,
        crlb: crlb_vals,
        std_bound,
        fisher_condition: condition,
    })
}

/// Per-parameter std-bound ratios `B / A` for the selected parameter labels
/// (labels must exist in both results).
pub fn compare_protocols(
    spec_a: &FisherSpec,
    spec_b: &FisherSpec,
    parameters: &[String],
) -> Result<Vec<(String, f64)>> {
    let a = crlb(spec_a)?;
    let b = crlb(spec_b)?;
    compare_results(&a, &b, parameters)
}

/// Ratio table from two precomputed CRLB results.
pub fn compare_results(
    a: &CrlbResult,
    b: &CrlbResult,
    parameters: &[String],
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(parameters.len());
    for name in parameters {
        let sa = a
            .std_bound_for(name)
            .ok_or_else(|| Error::config(format!("parameter {name} not in protocol A result")))?;
        let sb = b
            .std_bound_for(name)
            .ok_or_else(|| Error::config(format!("parameter {name} not in protocol B result")))?;
        out.push((name.clone(), sb / sa));
    }
    Ok(out)
}

/// The three-voxel amplitude sets of the shared-relaxation toy comparison:
/// (1, 1, 1), (0.8, 0.6, 1.8), (2, 0.5, 0.5).
pub fn toy_three_voxel_models() -> Vec<CompartmentModel> {
    vec![
        CompartmentModel::toy_with_amplitudes([1.0, 1.0, 1.0]),
        CompartmentModel::toy_with_amplitudes([0.8, 0.6, 1.8]),
        CompartmentModel::toy_with_amplitudes([2.0, 0.5, 0.5]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{default_2d_schedule, default_t1_schedule, default_t2_schedule};

    fn assert_rel(got: f64, want: f64, tol: f64) {
        let denom = want.abs().max(1e-300);
        assert!(
            ((got - want) / denom).abs() < tol,
            "got {got}, want {want} (rel tol {tol})"
        );
    }

    #[test]
    fn jacobian_amplitude_column_at_origin() {
        let model = CompartmentModel::toy_three_compartment();
        let schedule = vec![ContrastEncoding::inversion_recovery(0.0, 0.0)];
        let j = jacobian(&model, &schedule, KernelMode::T1T2);
        for s in 0..3 {
            assert_eq!(j[(0, 3 * s)], -1.0);
        }
    }

    #[test]
    fn jacobian_t2_only_columns() {
        let model = CompartmentModel::new(vec![crate::model::Compartment {
            amplitude: 1.7,
            t1_ms: 900.0,
            t2_ms: 80.0,
        }])
        .unwrap();
        let te = 55.0;
        let schedule = vec![ContrastEncoding::spin_echo(te)];
        let j = jacobian(&model, &schedule, KernelMode::T2Only);
        assert_eq!(j.dim(), (1, 2));
        assert_rel(j[(0, 0)], (-te / 80.0f64).exp(), 1e-14);
        assert_rel(
            j[(0, 1)],
            1.7 * (te / (80.0f64 * 80.0)) * (-te / 80.0f64).exp(),
            1e-14,
        );
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let model = CompartmentModel::new(
                (0..2)
                    .map(|_| crate::model::Compartment {
                        amplitude: 0.2 + 2.5 * rng.random::<f64>(),
                        t1_ms: 200.0 + 2500.0 * rng.random::<f64>(),
                        t2_ms: 10.0 + 250.0 * rng.random::<f64>(),
                    })
                    .collect(),
            )
            .unwrap();
            let schedule = vec![ContrastEncoding::inversion_recovery(
                350.0 * rng.random::<f64>(),
                2500.0 * rng.random::<f64>(),
            )];
            let j = jacobian(&model, &schedule, KernelMode::T1T2);

            let eval = |m: &CompartmentModel| {
                crate::phantom::simulate_signal(m, &schedule).unwrap()[0]
            };
            for s in 0..2 {
                for d in 0..3 {
                    let theta = match d {
                        0 => model.compartments[s].amplitude,
                        1 => model.compartments[s].t1_ms,
                        _ => model.compartments[s].t2_ms,
                    };
                    let h = 1e-4 * theta;
                    let mut plus = model.clone();
                    let mut minus = model.clone();
                    match d {
                        0 => {
                            plus.compartments[s].amplitude += h;
                            minus.compartments[s].amplitude -= h;
                        }
                        1 => {
                            plus.compartments[s].t1_ms += h;
                            minus.compartments[s].t1_ms -= h;
                        }
                        _ => {
                            plus.compartments[s].t2_ms += h;
                            minus.compartments[s].t2_ms -= h;
                        }
                    }
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let analytic = j[(0, 3 * s + d)];
                    // Near-null derivatives sit below the central-difference
                    // cancellation floor (~eps·|m|/h), so the relative check
                    // uses a matching absolute floor.
                    let denom = analytic.abs().max(fd.abs()).max(1e-5);
                    assert!(
                        ((fd - analytic) / denom).abs() < 1e-6,
                        "s={s} d={d}: fd {fd} vs analytic {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn fisher_scales_with_averages_and_matches_jtj() {
        let model = CompartmentModel::toy_three_compartment();
        let spec1 = FisherSpec::single(
            model.clone(),
            default_2d_schedule(),
            0.5,
            1,
            KernelMode::T1T2,
        );
        let spec2 = FisherSpec {
            averages: 2,
            ..spec1.clone()
        };
        let f1 = fisher_matrix(&spec1).unwrap();
        let f2 = fisher_matrix(&spec2).unwrap();
        for (a, b) in f1.iter().zip(f2.iter()) {
            assert_rel(*b, 2.0 * a, 1e-14);
        }
        // Definition check against an explicit JᵀJ.
        let j = jacobian(&model, &spec1.schedule, KernelMode::T1T2);
        let jtj = j.t().dot(&j);
        for (a, b) in f1.iter().zip(jtj.iter()) {
            assert_rel(*a, b / 0.25, 1e-12);
        }
        // Symmetry and PSD (eigenvalues nonnegative).
        for i in 0..f1.nrows() {
            for k in 0..f1.ncols() {
                let denom = f1[(i, k)].abs().max(f1[(k, i)].abs()).max(1e-300);
                assert!((f1[(i, k)] - f1[(k, i)]).abs() / denom < 1e-12);
            }
        }
        let (vals, _) = crate::linalg::jacobi_eigh(&f1).unwrap();
        let max = vals[0];
        assert!(vals.iter().all(|&v| v >= -1e-10 * max));
    }

    #[test]
    fn shared_relaxation_dimensions() {
        let spec = FisherSpec {
            voxels: toy_three_voxel_models(),
            schedule: default_2d_schedule(),
            sigma: 1.0,
            averages: 1,
            mode: KernelMode::T1T2,
            sharing: Sharing::SharedRelaxation,
        };
        let f = fisher_matrix(&spec).unwrap();
        assert_eq!(f.dim(), (15, 15));
        let labels = parameter_labels(&spec).unwrap();
        assert_eq!(labels.len(), 15);
        assert_eq!(labels[0], "T1[1]");
        assert_eq!(labels[5], "T2[3]");
        assert_eq!(labels[6], "v1.f[1]");
        assert_eq!(labels[14], "v3.f[3]");
    }

    #[test]
    fn crlb_of_diagonal_fisher_is_reciprocal() {
        // A single compartment in T2-only mode with a single encoding at
        // te = 0 has Jacobian [1, 0]: the T2 column vanishes, so invert a
        // hand-built diagonal Fisher matrix through the same eigensolver path.
        let f = ndarray::array![[4.0, 0.0], [0.0, 0.25]];
        let (vals, vecs) = crate::linalg::jacobi_eigh(&f).unwrap();
        let mut diag = vec![0.0; 2];
        for i in 0..2 {
            for j in 0..2 {
                diag[i] += vecs[(i, j)] * vecs[(i, j)] / vals[j];
            }
        }
        assert_rel(diag[0], 0.25, 1e-14);
        assert_rel(diag[1], 4.0, 1e-14);
    }

    #[test]
    fn identical_specs_compare_to_unity() {
        let spec = FisherSpec::single(
            CompartmentModel::toy_three_compartment(),
            default_2d_schedule(),
            1.0,
            1,
            KernelMode::T1T2,
        );
        let params: Vec<String> = (1..=3).map(|s| format!("T2[{s}]")).collect();
        let ratios = compare_protocols(&spec, &spec, &params).unwrap();
        for (_, r) in ratios {
            assert_rel(r, 1.0, 1e-12);
        }
    }

    #[test]
    fn doubled_sigma_doubles_std_ratios() {
        let spec_a = FisherSpec::single(
            CompartmentModel::toy_three_compartment(),
            default_2d_schedule(),
            1.0,
            1,
            KernelMode::T1T2,
        );
        let spec_b = FisherSpec {
            sigma: 2.0,
            ..spec_a.clone()
        };
        let params: Vec<String> = vec!["f[1]".into(), "T1[2]".into(), "T2[3]".into()];
        let ratios = compare_protocols(&spec_a, &spec_b, &params).unwrap();
        for (_, r) in ratios {
            assert_rel(r, 2.0, 1e-10);
        }
    }

    #[test]
    fn crlb_permutes_with_compartment_order() {
        let schedule = default_2d_schedule();
        let model = CompartmentModel::toy_three_compartment();
        let mut permuted = model.clone();
        permuted.compartments.swap(0, 2);
        let a = crlb(&FisherSpec::single(model, schedule.clone(), 1.0, 1, KernelMode::T1T2)).unwrap();
        let b = crlb(&FisherSpec::single(permuted, schedule, 1.0, 1, KernelMode::T1T2)).unwrap();
        // Compartment 1 of A is compartment 3 of B.
        assert_rel(
            a.std_bound_for("T2[1]").unwrap(),
            b.std_bound_for("T2[3]").unwrap(),
            1e-9,
        );
        assert_rel(
            a.std_bound_for("f[3]").unwrap(),
            b.std_bound_for("f[1]").unwrap(),
            1e-9,
        );
    }

    #[test]
    fn more_encodings_never_hurt() {
        // Information monotonicity: adding an encoding cannot increase any
        // CRLB diagonal entry.
        // The conventional 32-echo protocol is near-degenerate for this model
        // (Fisher condition ~1e16), so lift the identifiability cap.
        let model = CompartmentModel::toy_three_compartment();
        let mut schedule = default_t2_schedule();
        let base = crlb_with_cap(
            &FisherSpec::single(model.clone(), schedule.clone(), 1.0, 7, KernelMode::T2Only),
            1e18,
        )
        .unwrap();
        schedule.push(ContrastEncoding::spin_echo(5.0));
        let extended = crlb_with_cap(
            &FisherSpec::single(model, schedule, 1.0, 7, KernelMode::T2Only),
            1e18,
        )
        .unwrap();
        for (b, e) in base.crlb.iter().zip(extended.crlb.iter()) {
            assert!(*e <= b * (1.0 + 1e-9), "extended {e} > base {b}");
        }
    }

    #[test]
    fn shared_relaxation_never_worse_than_per_voxel() {
        let schedule = default_2d_schedule();
        let shared = crlb(&FisherSpec {
            voxels: toy_three_voxel_models(),
            schedule: schedule.clone(),
            sigma: 1.0,
            averages: 1,
            mode: KernelMode::T1T2,
            sharing: Sharing::SharedRelaxation,
        })
        .unwrap();
        for (v, model) in toy_three_voxel_models().into_iter().enumerate() {
            let single = crlb(&FisherSpec::single(
                model,
                schedule.clone(),
                1.0,
                1,
                KernelMode::T1T2,
            ))
            .unwrap();
            for s in 1..=3 {
                for rx in ["T1", "T2"] {
                    let name = format!("{rx}[{s}]");
                    let shared_v = shared.std_bound_for(&name).unwrap().powi(2);
                    let per_voxel = single.std_bound_for(&name).unwrap().powi(2);
                    assert!(
                        shared_v <= per_voxel * (1.0 + 1e-9),
                        "voxel {v} {name}: shared {shared_v} > per-voxel {per_voxel}"
                    );
                }
            }
        }
    }

    #[test]
    fn unidentifiable_protocol_is_reported() {
        // Two identical compartments make the model unidentifiable.
        let model = CompartmentModel::new(vec![
            crate::model::Compartment {
                amplitude: 1.0,
                t1_ms: 800.0,
                t2_ms: 90.0,
            },
            crate::model::Compartment {
                amplitude: 1.0,
                t1_ms: 800.0,
                t2_ms: 90.0,
            },
        ])
        .unwrap();
        let err = crlb(&FisherSpec::single(
            model,
            default_t1_schedule(),
            1.0,
            1,
            KernelMode::T1Only,
        ))
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unidentifiable"), "unexpected error: {msg}");
    }
}
