use std::path::Path;

use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of one run. Everything except the timestamps is a function
/// of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub config_path: Option<String>,
    /// Effective configuration, in the config file format.
    pub config: String,
    pub seed: u64,
    pub mode: String,
    pub output_dir: String,
    pub tool_version: String,
    pub started_utc: String,
    pub finished_utc: Option<String>,
    /// Files written, relative to `output_dir`.
    pub outputs: Vec<String>,
}

pub fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest fields are serializable") + "\n"
    }

    /// Replaces any previous manifest in `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), self.to_json())
    }
}
