//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tekg::miner::MinerConfig;
use tekg::pipeline::PipelineConfig;
use tekg::synth::PlantSpec;
use tekg::learner::TrainConfig;
use tekg::time::Granularity;
use tekg::tkg::Schema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub valid: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub schema: Schema,
    pub granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub forecast: bool,
    /// Re-split all facts by start time before running.
    pub resplit: Option<Resplit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resplit {
    pub valid_start: i64,
    pub test_start: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub miner: MinerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub synth: Option<PlantSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parses `text`, applies `key=value` overrides (dotted keys, TOML
    /// values) and resolves data paths against `base`.
    pub fn parse(text: &str, overrides: &[String], base: &Path) -> Result<Self> {
        let mut doc: toml::Table = text.parse().context("config is not valid TOML")?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .with_context(|| format!("override `{o}` is not key=value"))?;
            set(&mut doc, key.trim(), parse_value(value.trim()))?;
        }
        let mut cfg: RunConfig = toml::Value::Table(doc).try_into().context("invalid configuration")?;
        if let Some(d) = cfg.data.as_mut() {
            d.train = base.join(&d.train);
            d.valid = d.valid.as_ref().map(|p| base.join(p));
            d.test = d.test.as_ref().map(|p| base.join(p));
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                Self::parse(&text, overrides, p.parent().unwrap_or(Path::new(".")))
            }
            None => Self::parse("", overrides, Path::new(".")),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            miner: self.miner.clone(),
            train: self.train.clone(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.miner.validate()?;
        self.train.validate()?;
        if let Some(d) = &self.data {
            for p in std::iter::once(&d.train).chain(&d.valid).chain(&d.test) {
                if !p.is_file() {
                    bail!("data file {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }
}

fn parse_value(s: &str) -> toml::Value {
    let doc = format!("v = {s}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(s.to_owned()),
    }
}

fn set(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).with_context(|| format!("empty override key `{key}`"))?;
    let mut table = doc;
    for p in parts {
        let entry = table
            .entry(p.to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override `{key}`: `{p}` is not a section"),
        };
    }
    table.insert(last.to_owned(), value);
    Ok(())
}
