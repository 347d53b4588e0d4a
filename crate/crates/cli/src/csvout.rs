//! Small CSV writers for tables and traces.

use std::fs;
use std::path::Path;

use mdspec_core::{Error, Result};

pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Full-precision float formatting that survives a parse round trip
/// (`{:?}` prints the shortest representation that round-trips for f64).
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}
