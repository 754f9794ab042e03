use std::fs;
use std::path::{Path, PathBuf};

use fewshot_gp::datasets::{write_csv, DatasetCollection};
use fewshot_gp::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the collection's canonical CSV serialization.
pub fn dataset_hash(col: &DatasetCollection) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(col, &mut buf)?;
    Ok(sha256_hex(&buf))
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Record of one CLI run: enough to rerun it and check the outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub config_sha256: String,
    pub dataset_sha256: Option<String>,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputFile>,
    pub timings_ms: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config_toml: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            config_sha256: sha256_hex(config_toml.as_bytes()),
            dataset_sha256: None,
            config,
            outputs: Vec::new(),
            timings_ms: serde_json::Value::Object(Default::default()),
        }
    }

    /// Hashes and records a file written by the run.
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.outputs.push(OutputFile {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn time(&mut self, key: &str, ms: f64) {
        if let serde_json::Value::Object(m) = &mut self.timings_ms {
            m.insert(key.to_string(), serde_json::json!(ms));
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
