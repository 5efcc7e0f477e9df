//! `manifest.json`: per-stage record of configuration, seed and artifact
//! hashes.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tekg::learner::sha256_hex;

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: u64,
    /// Resolved configuration, loadable again with `--config`.
    pub config: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
}

pub struct Manifest {
    stage: &'static str,
    record: StageRecord,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ManifestFile {
    stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn begin(stage: &'static str, cfg: &RunConfig) -> Result<Self> {
        Ok(Manifest {
            stage,
            record: StageRecord {
                seed: cfg.seed,
                config: toml::to_string(cfg).context("cannot serialize configuration")?,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            },
        })
    }

    pub fn input(&mut self, name: &str, bytes: &[u8]) {
        self.record.inputs.insert(name.to_owned(), sha256_hex(bytes));
    }

    pub fn output(&mut self, name: &str, bytes: &[u8]) {
        self.record.outputs.insert(name.to_owned(), sha256_hex(bytes));
    }

    /// Merges this stage into `dir/manifest.json`.
    pub fn finish(self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let mut file: ManifestFile = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => ManifestFile::default(),
        };
        file.stages.insert(self.stage.to_owned(), self.record);
        let text = serde_json::to_string_pretty(&file)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}
