//! Config file loading and flag precedence.
//!
//! The config is one TOML file: top-level `seed`, `mode` and `output_dir`,
//! plus `[phantom]`, `[acquisition]`, `[recon]`, `[model]`, `[train]`,
//! `[split]` and `[eval]` sections. Missing keys take desk defaults. Command
//! line flags (`--seed`, `--mode`, `--out`) override the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use vrmsi_core::learn::TrainMode;
use vrmsi_core::pipeline::ExperimentConfig;

use crate::CliError;

pub const DEFAULT_OUTPUT_DIR: &str = "vrmsi-out";

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<TrainMode>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub experiment: ExperimentConfig,
    pub output_dir: PathBuf,
}

pub fn parse_config(text: &str) -> Result<(ExperimentConfig, Option<PathBuf>), CliError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let out = match table.remove("output_dir") {
        None => None,
        Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return Err(CliError::Config("output_dir must be a string".into())),
    };
    let cfg: ExperimentConfig = table.try_into().map_err(|e| CliError::Config(e.to_string()))?;
    Ok((cfg, out))
}

pub fn load_settings(path: Option<&Path>, ov: &Overrides) -> Result<Settings, CliError> {
    let (mut experiment, file_out) = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => (ExperimentConfig::default(), None),
    };
    if let Some(s) = ov.seed {
        experiment.seed = s;
    }
    if let Some(m) = ov.mode {
        experiment.mode = m;
    }
    experiment.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let output_dir = ov
        .out
        .clone()
        .or(file_out)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    Ok(Settings { experiment, output_dir })
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_json(v: &impl Serialize) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("config serializes"))
}

/// Hashes of the config sections each stage depends on, cumulative along the
/// stage chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfigHashes {
    pub phantom: String,
    pub acquire: String,
    pub recon: String,
    pub train: String,
    pub eval: String,
}

impl ConfigHashes {
    pub fn of(c: &ExperimentConfig) -> Self {
        let phantom = hash_json(&(c.seed, c.mode, &c.phantom, &c.split));
        let acquire = hash_json(&(&phantom, &c.acquisition));
        let recon = hash_json(&(&acquire, &c.recon));
        let train = hash_json(&(&recon, &c.model, &c.train));
        let eval = hash_json(&(&train, &c.eval));
        Self {
            phantom,
            acquire,
            recon,
            train,
            eval,
        }
    }
}
