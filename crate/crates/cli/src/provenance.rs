//! Per-stage provenance records and the skip-if-unchanged rule.
//!
//! Every stage directory holds `provenance.json` listing the SHA-256 of each
//! input and output file (paths relative to the run directory), the hash of
//! the config sections the stage depends on, and the phantom config hash that
//! anchors the whole chain. The timestamp is informational and never hashed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::{CliError, Stage};

pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: Stage,
    pub tool_version: String,
    pub config_hash: String,
    pub phantom_config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub created_unix: u64,
}

pub fn tool_version() -> String {
    format!("vrmsi {}", env!("CARGO_PKG_VERSION"))
}

pub fn provenance_path(run: &Path, stage: Stage) -> PathBuf {
    run.join(stage.dir()).join(PROVENANCE_FILE)
}

pub fn read_provenance(run: &Path, stage: Stage) -> Result<Option<Provenance>, CliError> {
    let path = provenance_path(run, stage);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

/// Provenance of a finished upstream stage, or a dependency error naming it.
pub fn require(run: &Path, stage: Stage) -> Result<Provenance, CliError> {
    read_provenance(run, stage)?.ok_or_else(|| CliError::Missing {
        stage,
        path: provenance_path(run, stage),
    })
}

fn rel(run: &Path, path: &Path) -> String {
    path.strip_prefix(run)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn hash_files(run: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
    files
        .iter()
        .map(|f| {
            let bytes = fs::read(f).map_err(|e| CliError::Other(format!("{}: {e}", f.display())))?;
            Ok((rel(run, f), sha256_hex(&bytes)))
        })
        .collect()
}

/// True when `prev` was produced from the same config and inputs and all of
/// its outputs are still on disk unmodified.
pub fn is_current(
    run: &Path,
    prev: &Provenance,
    config_hash: &str,
    inputs: &BTreeMap<String, String>,
) -> bool {
    if prev.config_hash != config_hash || &prev.inputs != inputs || prev.tool_version != tool_version() {
        return false;
    }
    prev.outputs.iter().all(|(p, h)| {
        fs::read(run.join(p))
            .map(|b| &sha256_hex(&b) == h)
            .unwrap_or(false)
    })
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_provenance(run: &Path, p: &Provenance) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(p).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(provenance_path(run, p.stage), text + "\n")?;
    Ok(())
}
