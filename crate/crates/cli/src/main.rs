use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdspec_cli::commands::{
    cmd_analyze, cmd_crlb, cmd_fit, cmd_reproduce, cmd_scale_correct, cmd_simulate,
};
use mdspec_cli::config::RunConfig;
use mdspec_cli::{exit_code, Overrides};

/// Multidimensional correlation spectroscopic imaging pipeline.
#[derive(Parser)]
#[command(name = "mdspec", version, about)]
struct Cli {
    /// Worker threads (default: MDSPEC_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Spatial regularization weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Augmented Lagrangian parameter.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Relative primal/dual residual threshold.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic phantom dataset (noiseless, noisy, ground truth).
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Noise generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a spectroscopic image to a dataset.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        /// Input dataset container.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Verify the solution against the per-voxel NNLS reference
        /// (small lambda=0 problems only).
        #[arg(long, hide = true)]
        oracle_check: bool,
    },
    /// Restore TI=0 polarity and remove its unknown scale factor.
    ScaleCorrect {
        #[command(flatten)]
        common: CommonArgs,
        /// Input dataset container.
        #[arg(long)]
        data: PathBuf,
    },
    /// Detect spectral peaks and integrate them into spatial maps.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Input spectroscopic-image container.
        #[arg(long)]
        image: PathBuf,
    },
    /// Compare acquisition protocols through Cramér-Rao bounds.
    Crlb {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the full simulation study: 2D fit, both 1D baselines, analyses,
    /// CRLB tables, and a comparison summary.
    ReproducePaperSim {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

fn load_config(path: &Option<PathBuf>) -> mdspec_core::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn init_threads(cli_threads: Option<usize>, config: &RunConfig) {
    let threads = cli_threads
        .or_else(|| {
            std::env::var("MDSPEC_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .or(config.run.as_ref().and_then(|r| r.threads));
    if let Some(n) = threads {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run(cli: Cli) -> mdspec_core::Result<()> {
    match cli.command {
        Command::Simulate { common, seed } => {
            let config = load_config(&common.config)?;
            init_threads(cli.threads, &config);
            let ov = Overrides {
                seed,
                force: common.force,
                ..Default::default()
            };
            cmd_simulate(&config, &common.out, &ov)?;
        }
        Command::Fit {
            common,
            data,
            solver,
            oracle_check,
        } => {
            let config = load_config(&common.config)?;
            init_threads(cli.threads, &config);
            let ov = Overrides {
                lambda: solver.lambda,
                mu: solver.mu,
                max_iters: solver.max_iters,
                tolerance: solver.tol,
                force: common.force,
                oracle_check,
                ..Default::default()
            };
            cmd_fit(&data, &config, &common.out, &ov)?;
        }
        Command::ScaleCorrect { common, data } => {
            let config = load_config(&common.config)?;
            init_threads(cli.threads, &config);
            let ov = Overrides {
                force: common.force,
                ..Default::default()
            };
            cmd_scale_correct(&data, &config, &common.out, &ov)?;
        }
        Command::Analyze { common, image } => {
            let config = load_config(&common.config)?;
            init_threads(cli.threads, &config);
            let ov = Overrides {
                force: common.force,
                ..Default::default()
            };
            cmd_analyze(&image, &config, &common.out, &ov)?;
        }
        Command::Crlb { common } => {
            let config = load_config(&common.config)?;
            init_threads(cli.threads, &config);
            let ov = Overrides {
                force: common.force,
                ..Default::default()
            };
            cmd_crlb(&config, &common.out, &ov)?;
        }
        Command::ReproducePaperSim {
            common,
            seed,
            solver,
        } => {
            let config = load_config(&common.config)?;
            init_threads(cli.threads, &config);
            let ov = Overrides {
                seed,
                lambda: solver.lambda,
                mu: solver.mu,
                max_iters: solver.max_iters,
                tolerance: solver.tol,
                force: common.force,
                ..Default::default()
            };
            cmd_reproduce(&config, &common.out, &ov)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
