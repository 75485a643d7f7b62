//! Run manifest written beside every output: the resolved configuration,
//! input digests and produced artifacts, enough to re-run the command
//! byte-identically in single-worker mode.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub format_version: u32,
    pub subcommand: String,
    pub argv: Vec<String>,
    /// Effective configuration after defaults, file and flag overrides.
    pub config: serde_json::Value,
    /// Input path -> SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            format_version: MANIFEST_FORMAT_VERSION,
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            config,
            inputs: BTreeMap::new(),
            seed,
            artifacts: Vec::new(),
        }
    }

    pub fn digest_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes =
            fs::read(path).with_context(|| format!("reading input {}", path.display()))?;
        self.inputs.insert(
            path.display().to_string(),
            hex::encode(Sha256::digest(&bytes)),
        );
        Ok(())
    }

    pub fn add_artifact(&mut self, path: impl AsRef<Path>) {
        self.artifacts.push(path.as_ref().display().to_string());
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join("manifest.json");
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
