//! Run manifests: every subcommand records its config snapshot, seed, and
//! the SHA-256 of each input and output, so runs can be chained and
//! reproduced byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    /// Full config snapshot (`key=value` text), empty when none applied.
    pub config: String,
    /// Input path → SHA-256 (hex).
    pub inputs: BTreeMap<String, String>,
    /// Output path → SHA-256 (hex).
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: String) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        fs::write(path, json + "\n").map_err(CliError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let json = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&json).map_err(|e| CliError::Corpus {
            path: path.to_path_buf(),
            detail: format!("bad manifest: {e}"),
        })
    }

    /// Checks that every recorded input still hashes the same.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for (path, expected) in &self.inputs {
            let actual = sha256_file(Path::new(path))?;
            if &actual != expected {
                return Err(CliError::Corpus {
                    path: path.into(),
                    detail: "input hash differs from the manifest".to_string(),
                });
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Default manifest path: alongside the primary output.
pub fn default_manifest_path(primary_output: &Path) -> std::path::PathBuf {
    let mut name = primary_output
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".to_string());
    name.push_str(".manifest.json");
    primary_output.with_file_name(name)
}
