//! Run manifest: effective configuration, hashes of inputs and outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

/// Collects outputs as they are written so the manifest can hash them.
pub struct RunOutput {
    pub dir: PathBuf,
    command: String,
    config: BTreeMap<String, String>,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    details: serde_json::Value,
}

impl RunOutput {
    pub fn create(dir: &Path, command: &str, config: BTreeMap<String, String>, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(RunOutput {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            details: serde_json::Value::Null,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.to_string_lossy().to_string(), hash);
        Ok(())
    }

    /// Atomically writes `name` inside the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        zegnn::tabular::write_atomic(&path, bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Records a file that a library routine already wrote into the directory.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let hash = sha256_file(&self.dir.join(name))?;
        self.outputs.insert(name.to_string(), hash);
        Ok(())
    }

    pub fn set_details(&mut self, details: serde_json::Value) {
        self.details = details;
    }

    pub fn finish(self) -> Result<()> {
        let canonical: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let manifest = Manifest {
            tool: "zegnn",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config_hash: sha256_hex(canonical.as_bytes()),
            config: self.config,
            seed: self.seed,
            threads: rayon::current_num_threads(),
            inputs: self.inputs,
            outputs: self.outputs,
            details: self.details,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        zegnn::tabular::write_atomic(&self.dir.join("manifest.json"), &bytes)?;
        Ok(())
    }
}
