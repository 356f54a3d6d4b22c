//! Every run writes a manifest beside its primary output so any pipeline of
//! subcommands can be reproduced from the artifacts alone. Manifests are
//! deterministic: no timestamps, stable key order.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: Option<u64>,
    /// SHA-256 over the effective configuration (serialized config plus the
    /// raw bytes of every loaded auxiliary file).
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

pub struct ManifestBuilder {
    subcommand: String,
    seed: Option<u64>,
    hasher: Sha256,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            seed: None,
            hasher: Sha256::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Fold configuration material into the hash.
    pub fn config_bytes(mut self, label: &str, bytes: &[u8]) -> Self {
        self.hasher.update(label.as_bytes());
        self.hasher.update([0u8]);
        self.hasher.update(bytes);
        self
    }

    pub fn config_value(self, label: &str, value: &impl Serialize) -> Self {
        let json = serde_json::to_vec(value).expect("config serialization cannot fail");
        self.config_bytes(label, &json)
    }

    pub fn input(mut self, label: &str, path: &Path) -> Self {
        self.inputs
            .insert(label.to_string(), path.display().to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Write `<primary_output>.manifest.json`.
    pub fn write(self, primary_output: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            tool: "posefix",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            seed: self.seed,
            config_sha256: format!("{:x}", self.hasher.finalize()),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let mut name = primary_output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        name.push_str(".manifest.json");
        let path = primary_output.with_file_name(name);
        let text =
            serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
        std::fs::write(&path, text)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }
}
