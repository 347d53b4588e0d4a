pub mod analyze;
pub mod crlb_cmd;
pub mod fit;
pub mod reproduce;
pub mod scale_correct;
pub mod simulate;

pub use analyze::{cmd_analyze, AnalyzeOutputs};
pub use crlb_cmd::{cmd_crlb, CrlbOutputs};
pub use fit::{cmd_fit, FitOutputs};
pub use reproduce::cmd_reproduce;
pub use scale_correct::{cmd_scale_correct, ScaleOutputs};
pub use simulate::{cmd_simulate, SimulateOutputs};

use mdspec_core::{Error, Result};
use std::path::Path;

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}
