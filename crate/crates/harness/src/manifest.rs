//! Run manifests: what was run, on which configuration, producing what.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// Git-style content hash: SHA-256 over `"blob <len>\0"` followed by the
/// bytes, as `git hash-object` computes it in SHA-256 repositories.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    /// Hash of the canonical JSON below.
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, outputs: Vec<String>) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: blob_hash(config.to_json().as_bytes()),
            config: config.clone(),
            outputs,
        }
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn hash_tracks_config_content() {
        let a = RunManifest::new("se", &ExperimentConfig::default(), vec![]);
        let b = RunManifest::new("se", &ExperimentConfig { sigma: 0.02, ..Default::default() }, vec![]);
        assert_ne!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash, RunManifest::new("amp", &ExperimentConfig::default(), vec![]).config_hash);
    }
}
