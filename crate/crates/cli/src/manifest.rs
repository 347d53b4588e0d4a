//! Run manifest: records a command's inputs, outputs, and provenance so
//! pipeline stages can be chained by file role rather than by path
//! convention.

use std::collections::BTreeMap;
use std::path::Path;

use mdspec_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// role -> input path
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// role -> output path
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, seed: Option<u64>) -> Self {
        Manifest {
            command: command.to_string(),
            config_hash,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> &mut Self {
        self.inputs.insert(role.to_string(), path.display().to_string());
        self
    }

    pub fn output(&mut self, role: &str, path: &Path) -> &mut Self {
        self.outputs.insert(role.to_string(), path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, json)
            .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
    }
}
