//! Command pipeline for multidimensional correlation spectroscopic imaging:
//! simulate synthetic datasets, scale-correct inversion-recovery data, fit
//! spectroscopic images, analyze spectra into compartment maps, and compare
//! acquisition protocols through Cramér-Rao bounds.

pub mod commands;
pub mod config;
pub mod container;
pub mod csvout;
pub mod manifest;

use mdspec_core::Error;

/// Process exit code for an error: 2 configuration, 3 data, 4 numerical.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Data(_) => 3,
        Error::Numerical(_) => 4,
    }
}

/// Common command-line overrides threaded into every command.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub max_iters: Option<usize>,
    pub tolerance: Option<f64>,
    pub force: bool,
    pub oracle_check: bool,
}

/// Refuse to overwrite an existing output unless `--force` was given.
pub(crate) fn guard_output(path: &std::path::Path, force: bool) -> mdspec_core::Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "output {} already exists (use --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}
