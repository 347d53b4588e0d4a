//! Spectroscopic-image estimation: read a dataset, build the dictionary for
//! the configured grid, run the solver, and write the solution plus a
//! convergence trace.

use std::path::{Path, PathBuf};

use mdspec_core::model::build_dictionary;
use mdspec_core::solver::{nnls::nnls, objective, solve};
use mdspec_core::{Error, Result};
use ndarray::Array2;

use crate::commands::ensure_dir;
use crate::config::RunConfig;
use crate::container::{read_dataset, write_image, Provenance};
use crate::csvout::{fmt, write_csv};
use crate::manifest::Manifest;
use crate::{guard_output, Overrides};

#[derive(Debug)]
pub struct FitOutputs {
    pub solution: PathBuf,
    pub convergence: PathBuf,
    pub manifest: PathBuf,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
}

pub fn cmd_fit(
    dataset_path: &Path,
    config: &RunConfig,
    out_dir: &Path,
    ov: &Overrides,
) -> Result<FitOutputs> {
    ensure_dir(out_dir)?;
    let (ds, _header) = read_dataset(dataset_path)?;

    // When the config pins a protocol, the file must match it exactly.
    if config.protocol.is_some() {
        let expected = config.schedule()?;
        if expected != ds.schedule {
            let diff: Vec<String> = expected
                .iter()
                .zip(ds.schedule.iter())
                .enumerate()
                .filter(|(_, (a, b))| a != b)
                .take(5)
                .map(|(p, (a, b))| {
                    format!(
                        "  encoding {p}: config (te {}, ti {:?}) vs file (te {}, ti {:?})",
                        a.te_ms, a.ti_ms, b.te_ms, b.ti_ms
                    )
                })
                .collect();
            let len_note = if expected.len() != ds.schedule.len() {
                format!(
                    "  lengths differ: config {} vs file {}\n",
                    expected.len(),
                    ds.schedule.len()
                )
            } else {
                String::new()
            };
            return Err(Error::Config(format!(
                "schedule mismatch between config and {}:\n{len_note}{}",
                dataset_path.display(),
                diff.join("\n")
            )));
        }
    }

    let grid = config.spectral_grid()?;
    let mode = config.kernel_mode()?;
    let dict = build_dictionary(&ds.schedule, &grid, mode)?;

    let mut solver_config = config.solver_config();
    if let Some(v) = ov.lambda {
        solver_config.lambda = v;
    }
    if let Some(v) = ov.mu {
        solver_config.mu = v;
    }
    if let Some(v) = ov.max_iters {
        solver_config.max_iters = v;
    }
    if let Some(v) = ov.tolerance {
        solver_config.tolerance = v;
    }
    match config.solver.as_ref().and_then(|s| s.init.as_deref()) {
        None | Some("zero") => {}
        Some("nnls") => {
            solver_config.init = mdspec_core::solver::Init::Warm(nnls_warm_start(&ds, &dict)?);
        }
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown solver init {other:?} (expected \"zero\" or \"nnls\")"
            )))
        }
    }

    let (image, report) = solve(&ds, &dict, &solver_config)?;

    if ov.oracle_check {
        oracle_check(&ds, &dict, &image.values, solver_config.lambda)?;
    }

    let hash = config.content_hash();
    let solution = out_dir.join("solution.mdcsi");
    let convergence = out_dir.join("convergence.csv");
    let manifest_path = out_dir.join("manifest.json");
    for p in [&solution, &convergence, &manifest_path] {
        guard_output(p, ov.force)?;
    }

    write_image(
        &solution,
        &image,
        Some(&ds.mask),
        Provenance {
            config_hash: Some(hash.clone()),
            solver_iterate: Some("Y".to_string()),
            ..Default::default()
        },
    )?;
    write_csv(
        &convergence,
        "iteration,primal_residual,dual_residual",
        report
            .primal_residuals
            .iter()
            .zip(report.dual_residuals.iter())
            .enumerate()
            .map(|(i, (p, d))| format!("{},{},{}", i + 1, fmt(*p), fmt(*d))),
    )?;

    let mut manifest = Manifest::new("fit", hash, None);
    manifest
        .input("dataset", dataset_path)
        .output("solution", &solution)
        .output("convergence", &convergence);
    manifest.write(&manifest_path)?;

    println!(
        "fit: {} iterations ({}), objective {:.6e}",
        report.iterations,
        if report.converged {
            "converged"
        } else {
            "max iterations"
        },
        report.final_objective
    );

    Ok(FitOutputs {
        solution,
        convergence,
        manifest: manifest_path,
        iterations: report.iterations,
        converged: report.converged,
        final_objective: report.final_objective,
    })
}

/// Per-voxel NNLS solutions of the masked columns, as a warm-start iterate.
/// Rows of atoms whose kernel columns carry less than 1% of the largest
/// column norm start at zero: such atoms are nearly invisible to the data
/// term, so their NNLS amplitudes are noise fits that the solver would take
/// very long to remove.
fn nnls_warm_start(
    ds: &mdspec_core::MeasuredDataset,
    dict: &mdspec_core::DecayDictionary,
) -> Result<Array2<f64>> {
    use rayon::prelude::*;
    let (p, q) = dict.kernel().dim();
    let n = ds.voxel_count();
    let columns: Vec<mdspec_core::Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if ds.mask[i] == 0 {
                return Ok(vec![0.0; q]);
            }
            let b: Vec<f64> = (0..p).map(|pp| ds.data[(pp, i)]).collect();
            Ok(nnls(dict.kernel(), &b)?.x)
        })
        .collect();
    let mut f0 = Array2::<f64>::zeros((q, n));
    for (i, col) in columns.into_iter().enumerate() {
        for (qq, v) in col?.into_iter().enumerate() {
            f0[(qq, i)] = v;
        }
    }
    let col_norms: Vec<f64> = (0..q)
        .map(|qq| {
            dict.kernel()
                .column(qq)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let max_norm = col_norms.iter().cloned().fold(0.0, f64::max);
    for (qq, &norm) in col_norms.iter().enumerate() {
        if norm < 0.01 * max_norm {
            for i in 0..n {
                f0[(qq, i)] = 0.0;
            }
        }
    }
    Ok(f0)
}

/// Hidden verification path: for small spatially-uncoupled problems, compare
/// the solver's objective against the per-voxel active-set NNLS reference.
fn oracle_check(
    ds: &mdspec_core::MeasuredDataset,
    dict: &mdspec_core::DecayDictionary,
    solution: &Array2<f64>,
    lambda: f64,
) -> Result<()> {
    if lambda != 0.0 {
        return Err(Error::Config(
            "--oracle-check requires lambda = 0 (the reference solver is per-voxel NNLS)".into(),
        ));
    }
    let (p, q) = dict.kernel().dim();
    let n = ds.voxel_count();
    if p > 512 || q > 128 || n > 4096 {
        return Err(Error::Config(format!(
            "--oracle-check is limited to small problems (P <= 512, Q <= 128, N <= 4096); got P={p}, Q={q}, N={n}"
        )));
    }
    let mut f_oracle = Array2::<f64>::zeros((q, n));
    for i in 0..n {
        if ds.mask[i] == 0 {
            continue;
        }
        let b: Vec<f64> = (0..p).map(|pp| ds.data[(pp, i)]).collect();
        let sol = nnls(dict.kernel(), &b)?;
        for (qq, &x) in sol.x.iter().enumerate() {
            f_oracle[(qq, i)] = x;
        }
    }
    let cfg = mdspec_core::SolverConfig {
        lambda: 0.0,
        ..Default::default()
    };
    let obj_solver = objective(solution, dict, ds, &cfg)?;
    let obj_oracle = objective(&f_oracle, dict, ds, &cfg)?;
    let zero = Array2::<f64>::zeros((q, n));
    let obj_zero = objective(&zero, dict, ds, &cfg)?;
    let gap = (obj_solver - obj_oracle) / obj_oracle.max(1e-6 * obj_zero).max(f64::MIN_POSITIVE);
    println!(
        "oracle-check: solver objective {obj_solver:.9e}, reference NNLS objective {obj_oracle:.9e}, relative gap {gap:.3e}"
    );
    if !(gap < 1e-4) {
        return Err(Error::Numerical(format!(
            "oracle-check failed: solver objective exceeds the NNLS reference by a relative gap of {gap:.3e} (limit 1e-4)"
        )));
    }
    Ok(())
}
