//! The versioned JSON model artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{EraPolicy, Target};
use crate::error::{Error, Result};
use crate::miner::MinerConfig;
use crate::predictor::FallbackStats;
use crate::time::Granularity;
use crate::tkg::Schema;

use super::controller::ParamSpace;
use super::features::{Grids, Scoring};
use super::train::EpochStats;

pub const MODEL_FORMAT: &str = "tekg-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub format: String,
    pub version: u32,
    pub space: ParamSpace,
    pub scoring: Scoring,
    pub targets: Vec<Target>,
    pub duration: bool,
    pub schema: Schema,
    pub granularity: Granularity,
    pub grids: Grids,
    pub era: EraPolicy,
    pub miner: MinerConfig,
    pub epsilon: f64,
    pub theta: Vec<f64>,
    /// Hex SHA-256 of the rules file the model was trained against.
    pub rules_sha256: String,
    pub densities_sha256: String,
    pub fallback: FallbackStats,
    pub history: Vec<EpochStats>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::format("model", format!("unexpected format tag {:?}", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::format("model", format!("unsupported version {}", self.version)));
        }
        self.space.validate(&self.theta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Model = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    /// Fails unless `rules` and `densities` are the files the model was
    /// trained against.
    pub fn check_inputs(&self, rules: &[u8], densities: &[u8]) -> Result<()> {
        for (what, expected, bytes) in [
            ("rules", &self.rules_sha256, rules),
            ("densities", &self.densities_sha256, densities),
        ] {
            let got = sha256_hex(bytes);
            if &got != expected {
                return Err(Error::format(what, format!("hash {got} does not match model ({expected})")));
            }
        }
        Ok(())
    }
}
