//! Run manifest: tool version, config hash, per-stage file hashes, timings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(p: &Path) -> Result<String> {
    let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn load(out: &Path) -> Result<Option<Self>> {
        let p = out.join(FILE);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| CliError::Format { path: p, message: e.to_string() })
    }

    /// Record a stage, keeping other stages' entries.
    pub fn update(out: &Path, config_hash: &str, stage: &str, record: StageRecord) -> Result<()> {
        let mut m = Self::load(out)?.unwrap_or_default();
        m.tool = format!("carebi {}", env!("CARGO_PKG_VERSION"));
        m.config_hash = config_hash.to_string();
        m.stages.insert(stage.to_string(), record);
        let p = out.join(FILE);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }
}
