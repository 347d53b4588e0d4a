//! Independent-oracle verification of the ADMM solver.
//!
//! The spatially uncoupled case (lambda = 0) decouples per voxel into NNLS,
//! checked against the active-set reference solver; the coupled case is
//! checked against a long-run accelerated projected-gradient minimizer of the
//! same objective.

use mdspec_core::model::{DecayDictionary, SpectralGrid, SpectroscopicImage};
use mdspec_core::phantom::MeasuredDataset;
use mdspec_core::solver::{self, nnls::nnls, Init, SolverConfig};
use mdspec_core::ContrastEncoding;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Synthetic dictionary around an arbitrary kernel (the solver only uses the
/// kernel, schedule, and shapes).
fn synthetic_dictionary(kernel: Array2<f64>) -> DecayDictionary {
    let (p, q) = kernel.dim();
    let grid = SpectralGrid::from_parts(
        vec![1.0],
        (1..=q).map(|k| k as f64).collect(),
        vec![1.0; q],
    )
    .unwrap();
    let schedule: Vec<_> = (0..p)
        .map(|k| ContrastEncoding::spin_echo(1.0 + k as f64))
        .collect();
    DecayDictionary::from_parts(grid, schedule, mdspec_core::KernelMode::T2Only, kernel).unwrap()
}

fn random_problem(
    rng: &mut ChaCha8Rng,
    p: usize,
    q: usize,
    w: usize,
    h: usize,
    full_mask: bool,
) -> (DecayDictionary, MeasuredDataset) {
    let mut kernel = Array2::<f64>::zeros((p, q));
    for v in kernel.iter_mut() {
        *v = rng.random::<f64>() * 2.0 - 1.0;
    }
    let dict = synthetic_dictionary(kernel);
    let n = w * h;
    let mut data = Array2::<f64>::zeros((p, n));
    for v in data.iter_mut() {
        *v = rng.random::<f64>() * 2.0 - 1.0;
    }
    let mask: Vec<u8> = (0..n)
        .map(|_| {
            if full_mask || rng.random::<f64>() < 0.8 {
                1
            } else {
                0
            }
        })
        .collect();
    let ds = MeasuredDataset::new(data, dict.schedule().to_vec(), w, h, mask).unwrap();
    (dict, ds)
}

/// Gradient of the full objective at `f`:
/// `2 Kᵀ (K F - M) T + 2 lambda F L`, with `L = CᵀC` the periodic Laplacian.
fn objective_gradient(
    f: &Array2<f64>,
    kernel: &Array2<f64>,
    ds: &MeasuredDataset,
    lambda: f64,
) -> Array2<f64> {
    let kf = kernel.dot(f);
    let mut resid = &kf - &ds.data;
    for (i, &t) in ds.mask.iter().enumerate() {
        if t == 0 {
            for p in 0..resid.nrows() {
                resid[(p, i)] = 0.0;
            }
        }
    }
    let mut grad = kernel.t().dot(&resid);
    grad.mapv_inplace(|v| 2.0 * v);
    if lambda > 0.0 {
        let (w, h) = (ds.width, ds.height);
        for qq in 0..f.nrows() {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let left = y * w + (x + w - 1) % w;
                    let right = y * w + (x + 1) % w;
                    let up = ((y + h - 1) % h) * w + x;
                    let down = ((y + 1) % h) * w + x;
                    let lap = 4.0 * f[(qq, i)]
                        - f[(qq, left)]
                        - f[(qq, right)]
                        - f[(qq, up)]
                        - f[(qq, down)];
                    grad[(qq, i)] += 2.0 * lambda * lap;
                }
            }
        }
    }
    grad
}

fn kkt_violation(f: &Array2<f64>, grad: &Array2<f64>) -> (f64, f64) {
    let mut worst = 0.0f64;
    let mut gmax = 0.0f64;
    for (&fv, &gv) in f.iter().zip(grad.iter()) {
        gmax = gmax.max(gv.abs());
        worst = worst.max(fv.min(gv).abs());
    }
    (worst, gmax)
}

/// Long-run FISTA with projection onto the nonnegative orthant; the
/// brute-force minimizer used as the lambda > 0 oracle.
fn projected_gradient_oracle(
    kernel: &Array2<f64>,
    ds: &MeasuredDataset,
    lambda: f64,
    iters: usize,
) -> Array2<f64> {
    let q = kernel.ncols();
    let n = ds.voxel_count();
    // Upper bound on the Lipschitz constant: 2 sigma_max(K)^2 + 16 lambda.
    let mut v = vec![1.0; q];
    let gram = kernel.t().dot(kernel);
    let mut sigma_sq = 0.0;
    for _ in 0..200 {
        let mut nv = vec![0.0; q];
        for i in 0..q {
            let mut s = 0.0;
            for j in 0..q {
                s += gram[(i, j)] * v[j];
            }
            nv[i] = s;
        }
        let norm = nv.iter().map(|x| x * x).sum::<f64>().sqrt();
        sigma_sq = norm;
        for (a, b) in v.iter_mut().zip(nv.iter()) {
            *a = b / norm;
        }
    }
    let lip = 2.0 * sigma_sq + 16.0 * lambda;
    let step = 1.0 / lip;

    let mut f = Array2::<f64>::zeros((q, n));
    let mut momentum = f.clone();
    let mut t_prev = 1.0f64;
    let mut cost_prev = f64::INFINITY;
    for _ in 0..iters {
        let grad = objective_gradient(&momentum, kernel, ds, lambda);
        let mut f_next = momentum.clone();
        f_next.zip_mut_with(&grad, |x, &g| *x = (*x - step * g).max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt());
        let beta = (t_prev - 1.0) / t_next;
        let mut new_momentum = f_next.clone();
        new_momentum.zip_mut_with(&f, |m, &old| *m += beta * (*m - old));
        // Restart acceleration when the objective rises.
        let kf = kernel.dot(&f_next);
        let mut cost = 0.0;
        for i in 0..n {
            if ds.mask[i] == 0 {
                continue;
            }
            for p in 0..kernel.nrows() {
                let d = ds.data[(p, i)] - kf[(p, i)];
                cost += d * d;
            }
        }
        if cost > cost_prev {
            momentum = f_next.clone();
            t_prev = 1.0;
        } else {
            momentum = new_momentum;
            t_prev = t_next;
        }
        cost_prev = cost;
        f = f_next;
    }
    f
}

fn objective_value(
    f: &Array2<f64>,
    dict: &DecayDictionary,
    ds: &MeasuredDataset,
    lambda: f64,
) -> f64 {
    let config = SolverConfig {
        lambda,
        ..Default::default()
    };
    solver::objective(f, dict, ds, &config).unwrap()
}

#[test]
fn identity_kernel_reproduces_nonnegative_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let p = 6;
    let (w, h) = (3, 2);
    let dict = synthetic_dictionary(Array2::eye(p));
    let mut data = Array2::<f64>::zeros((p, w * h));
    for v in data.iter_mut() {
        *v = rng.random::<f64>();
    }
    let ds = MeasuredDataset::new(data.clone(), dict.schedule().to_vec(), w, h, vec![1; w * h]).unwrap();
    let config = SolverConfig {
        lambda: 0.0,
        tolerance: 1e-10,
        max_iters: 20000,
        ..Default::default()
    };
    let (image, report) = solver::solve(&ds, &dict, &config).unwrap();
    assert!(report.converged);
    for (got, want) in image.values.iter().zip(data.iter()) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn identity_kernel_projects_negative_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let p = 5;
    let (w, h) = (2, 2);
    let dict = synthetic_dictionary(Array2::eye(p));
    let mut data = Array2::<f64>::zeros((p, w * h));
    for v in data.iter_mut() {
        *v = rng.random::<f64>() * 2.0 - 1.0;
    }
    let ds = MeasuredDataset::new(data.clone(), dict.schedule().to_vec(), w, h, vec![1; w * h]).unwrap();
    let config = SolverConfig {
        lambda: 0.0,
        tolerance: 1e-10,
        max_iters: 20000,
        ..Default::default()
    };
    let (image, _) = solver::solve(&ds, &dict, &config).unwrap();
    for (got, &want) in image.values.iter().zip(data.iter()) {
        assert!((got - want.max(0.0)).abs() < 1e-6, "{got} vs {}", want.max(0.0));
    }
}

#[test]
fn admm_matches_nnls_oracle_for_uncoupled_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for trial in 0..20 {
        // Draw q <= p so each voxel's NNLS problem is strictly convex and
        // the optimal objective is bounded away from zero.
        let q = 2 + (rng.random::<u32>() % 13) as usize;
        let p = q + (rng.random::<u32>() as usize) % (21 - q);
        let (w, h) = (4, 4);
        let (dict, ds) = random_problem(&mut rng, p, q, w, h, true);
        let config = SolverConfig {
            lambda: 0.0,
            tolerance: 1e-10,
            max_iters: 60000,
            ..Default::default()
        };
        let (image, _) = solver::solve(&ds, &dict, &config).unwrap();

        // Column-by-column active-set reference.
        let mut f_oracle = Array2::<f64>::zeros((q, w * h));
        for i in 0..w * h {
            let b: Vec<f64> = (0..p).map(|pp| ds.data[(pp, i)]).collect();
            let sol = nnls(dict.kernel(), &b).unwrap();
            for qq in 0..q {
                f_oracle[(qq, i)] = sol.x[qq];
            }
        }

        let obj_admm = objective_value(&image.values, &dict, &ds, 0.0);
        let obj_oracle = objective_value(&f_oracle, &dict, &ds, 0.0);
        let obj_zero = objective_value(&Array2::zeros((q, w * h)), &dict, &ds, 0.0);
        let denom = obj_oracle.max(1e-6 * obj_zero);
        assert!(
            (obj_admm - obj_oracle) / denom < 1e-4,
            "trial {trial}: ADMM {obj_admm} vs NNLS {obj_oracle}"
        );

        let grad = objective_gradient(&image.values, dict.kernel(), &ds, 0.0);
        let (viol, gmax) = kkt_violation(&image.values, &grad);
        assert!(
            viol <= 1e-3 * gmax.max(1e-12),
            "trial {trial}: KKT violation {viol} vs scale {gmax}"
        );
    }
}

#[test]
fn admm_matches_projected_gradient_with_smoothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for &lambda in &[0.0, 0.01] {
        let (dict, ds) = random_problem(&mut rng, 4, 6, 3, 3, true);
        let config = SolverConfig {
            lambda,
            tolerance: 1e-13,
            max_iters: 300_000,
            ..Default::default()
        };
        let (image, _) = solver::solve(&ds, &dict, &config).unwrap();
        let f_pg = projected_gradient_oracle(dict.kernel(), &ds, lambda, 200_000);

        let obj_admm = objective_value(&image.values, &dict, &ds, lambda);
        let obj_pg = objective_value(&f_pg, &dict, &ds, lambda);
        let obj_zero = objective_value(&Array2::zeros(image.values.dim()), &dict, &ds, lambda);
        let denom = obj_pg.max(1e-6 * obj_zero);
        assert!(
            (obj_admm - obj_pg).abs() / denom < 1e-4,
            "lambda {lambda}: ADMM {obj_admm} vs PG {obj_pg}"
        );
    }
}

#[test]
fn masked_columns_stay_zero_without_smoothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let (dict, ds) = random_problem(&mut rng, 6, 8, 4, 3, false);
    assert!(ds.mask.iter().any(|&t| t == 0), "want at least one masked-out voxel");
    let config = SolverConfig {
        lambda: 0.0,
        tolerance: 1e-9,
        max_iters: 20000,
        init: Init::Zero,
        ..Default::default()
    };
    let (image, _) = solver::solve(&ds, &dict, &config).unwrap();
    for (i, &t) in ds.mask.iter().enumerate() {
        if t == 0 {
            for qq in 0..dict.atom_count() {
                assert_eq!(image.values[(qq, i)], 0.0, "voxel {i} atom {qq}");
            }
        }
    }
}

#[test]
fn atom_permutation_permutes_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let (dict, ds) = random_problem(&mut rng, 5, 7, 3, 3, true);
    let q = dict.atom_count();
    let perm: Vec<usize> = {
        let mut p: Vec<usize> = (0..q).collect();
        // Fisher-Yates with the seeded generator.
        for i in (1..q).rev() {
            let j = (rng.random::<u32>() as usize) % (i + 1);
            p.swap(i, j);
        }
        p
    };
    let mut permuted_kernel = Array2::<f64>::zeros(dict.kernel().dim());
    for (new_col, &old_col) in perm.iter().enumerate() {
        for row in 0..dict.encoding_count() {
            permuted_kernel[(row, new_col)] = dict.kernel()[(row, old_col)];
        }
    }
    let dict_perm = synthetic_dictionary(permuted_kernel);
    let config = SolverConfig {
        lambda: 0.01,
        tolerance: 1e-10,
        max_iters: 30000,
        ..Default::default()
    };
    let (a, _) = solver::solve(&ds, &dict, &config).unwrap();
    let (b, _) = solver::solve(&ds, &dict_perm, &config).unwrap();
    let scale = a.values.iter().map(|v| v.abs()).fold(1e-300, f64::max);
    for (new_row, &old_row) in perm.iter().enumerate() {
        for i in 0..ds.voxel_count() {
            let d = (b.values[(new_row, i)] - a.values[(old_row, i)]).abs();
            assert!(d <= 1e-9 * scale.max(1.0), "row {old_row}->{new_row} voxel {i}: {d}");
        }
    }
}

#[test]
fn repeated_solves_are_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let (dict, ds) = random_problem(&mut rng, 6, 9, 4, 4, false);
    let config = SolverConfig {
        lambda: 0.02,
        tolerance: 1e-8,
        max_iters: 5000,
        ..Default::default()
    };
    let (a, ra) = solver::solve(&ds, &dict, &config).unwrap();
    let (b, rb) = solver::solve(&ds, &dict, &config).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(ra.iterations, rb.iterations);
    assert_eq!(ra.final_objective, rb.final_objective);
}

#[test]
fn residuals_fall_below_tolerance_on_small_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let (dict, ds) = random_problem(&mut rng, 4, 6, 3, 3, true);
    let config = SolverConfig {
        lambda: 0.01,
        tolerance: 1e-6,
        max_iters: 2000,
        ..Default::default()
    };
    let (_, report) = solver::solve(&ds, &dict, &config).unwrap();
    assert!(
        report.converged,
        "expected convergence within 2000 iterations, residuals {:?}",
        report.primal_residuals.last()
    );
    assert!(*report.primal_residuals.last().unwrap() < 1e-6);
    assert!(*report.dual_residuals.last().unwrap() < 1e-6);
    // First iteration from zero init on nonzero data has nonzero primal residual.
    assert!(report.primal_residuals[0] > 0.0);
}

#[test]
fn warm_start_accepted_and_shape_checked() {
    let mut rng = ChaCha8Rng::seed_from_u64(39);
    let (dict, ds) = random_problem(&mut rng, 4, 5, 2, 2, true);
    let good = SolverConfig {
        lambda: 0.0,
        max_iters: 2000,
        tolerance: 1e-8,
        init: Init::Warm(Array2::zeros((5, 4))),
        ..Default::default()
    };
    assert!(solver::solve(&ds, &dict, &good).is_ok());
    let bad = SolverConfig {
        init: Init::Warm(Array2::zeros((3, 4))),
        ..good
    };
    assert!(solver::solve(&ds, &dict, &bad).is_err());
}

#[test]
fn schedule_mismatch_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let (dict, ds) = random_problem(&mut rng, 4, 5, 2, 2, true);
    let mut other = ds.clone();
    other.schedule[0] = ContrastEncoding::spin_echo(999.0);
    let config = SolverConfig::default();
    assert!(solver::solve(&other, &dict, &config).is_err());
}

#[test]
fn data_inverse_round_trip_at_dictionary_scale() {
    // Full protocol-scale dictionary: P = 105, Q = 10,000.
    let schedule = mdspec_core::phantom::default_2d_schedule();
    let grid = SpectralGrid::new(
        mdspec_core::log_grid(100.0, 3000.0, 100).unwrap(),
        mdspec_core::log_grid(2.0, 300.0, 100).unwrap(),
    )
    .unwrap();
    let dict = mdspec_core::build_dictionary(&schedule, &grid, mdspec_core::KernelMode::T1T2).unwrap();
    assert_eq!(dict.kernel().dim(), (105, 10_000));
    let op = solver::precompute_data_inverse(&dict, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let q = dict.atom_count();
    let gram_mul = |x: &[f64]| -> Vec<f64> {
        // (KᵀK + I) x without forming the Q x Q Gram matrix.
        let kx: Vec<f64> = (0..105)
            .map(|p| (0..q).map(|j| dict.kernel()[(p, j)] * x[j]).sum())
            .collect();
        (0..q)
            .map(|j| {
                let ktkx: f64 = (0..105).map(|p| dict.kernel()[(p, j)] * kx[p]).sum();
                ktkx + x[j]
            })
            .collect()
    };
    for _ in 0..10 {
        let x: Vec<f64> = (0..q).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let y = gram_mul(&x);
        let back = op.apply_vec(&y);
        let scale = x.iter().map(|v| v.abs()).fold(1e-300, f64::max);
        for (b, xx) in back.iter().zip(x.iter()) {
            assert!((b - xx).abs() < 1e-10 * scale.max(1.0));
        }
    }
}

#[test]
fn output_is_exactly_nonnegative_and_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (dict, ds) = random_problem(&mut rng, 8, 12, 4, 4, false);
    let config = SolverConfig {
        lambda: 0.05,
        max_iters: 300,
        tolerance: 0.0,
        ..Default::default()
    };
    let (image, report) = solver::solve(&ds, &dict, &config).unwrap();
    assert_eq!(report.iterations, 300);
    assert!(!report.converged);
    assert!(image.values.iter().all(|&v| v >= 0.0 && v.is_finite()));
}

/// The noiseless signal of a compartment model sitting exactly on grid nodes
/// equals the dictionary projection of the matching delta spectrum.
#[test]
fn dictionary_consistency_with_compartment_simulation() {
    let grid = SpectralGrid::new(
        mdspec_core::log_grid(100.0, 3000.0, 24).unwrap(),
        mdspec_core::log_grid(2.0, 300.0, 24).unwrap(),
    )
    .unwrap();
    let schedule = mdspec_core::phantom::default_2d_schedule();
    let dict = mdspec_core::build_dictionary(&schedule, &grid, mdspec_core::KernelMode::T1T2).unwrap();

    // Pick three grid nodes as compartments.
    let picks = [(20usize, 16usize, 1.0), (19, 18, 0.7), (22, 18, 1.4)];
    let model = mdspec_core::CompartmentModel::new(
        picks
            .iter()
            .map(|&(i1, i2, amp)| mdspec_core::Compartment {
                amplitude: amp,
                t1_ms: grid.t1_values()[i1],
                t2_ms: grid.t2_values()[i2],
            })
            .collect(),
    )
    .unwrap();
    let signal = mdspec_core::phantom::simulate_signal(&model, &schedule).unwrap();

    let mut image = SpectroscopicImage::zeros(grid.clone(), 1, 1);
    for &(i1, i2, amp) in &picks {
        let qq = grid.index_of(i1, i2);
        image.values[(qq, 0)] += amp / grid.weights()[qq];
    }
    let ds = mdspec_core::phantom::forward_project(&image, &dict).unwrap();
    for (p, &s) in signal.iter().enumerate() {
        let got = ds.data[(p, 0)];
        assert!(
            (got - s).abs() <= 1e-12 * s.abs().max(1.0),
            "encoding {p}: {got} vs {s}"
        );
    }
}
