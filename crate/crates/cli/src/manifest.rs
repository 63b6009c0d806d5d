//! Run manifest: what was run, on what, and what came out.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

use geopriv_core::attack::AreaEstimate;
use geopriv_core::ingest::{FilterReport, ParseReport};
use geopriv_core::UserTrace;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tallies {
    pub parse: ParseReport,
    pub filter: FilterReport,
    pub users_evaluated: usize,
    pub prior_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub input_digest: String,
    pub output_digest: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub valid: bool,
    pub error: Option<String>,
    pub tallies: Tallies,
    pub stages: Vec<StageRecord>,
    /// Output file (relative to the output directory) to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed,
            valid: false,
            error: None,
            tallies: Tallies::default(),
            stages: Vec::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), json + "\n")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Order-sensitive digest of trace contents.
pub fn traces_digest<'a>(traces: impl IntoIterator<Item = &'a UserTrace>) -> String {
    let mut h = Sha256::new();
    for t in traces {
        h.update((t.user_id.len() as u64).to_le_bytes());
        h.update(t.user_id.as_bytes());
        h.update((t.measurements.len() as u64).to_le_bytes());
        for m in &t.measurements {
            h.update(m.t.to_le_bytes());
            h.update(m.point.lat().to_le_bytes());
            h.update(m.point.lon().to_le_bytes());
            h.update(m.value.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn areas_digest<'a>(areas: impl IntoIterator<Item = &'a AreaEstimate>) -> String {
    let mut h = Sha256::new();
    for a in areas {
        let cells = a.cells_sorted();
        h.update((cells.len() as u64).to_le_bytes());
        for (r, c) in cells {
            h.update(r.to_le_bytes());
            h.update(c.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
