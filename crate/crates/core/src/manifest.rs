//! Run provenance written next to every command's outputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: String,
    pub versions: BTreeMap<String, String>,
    /// SHA-256 of the raw config bytes.
    pub config_sha256: Option<String>,
    /// Logical clock: 0 at start, rounds or trials completed at the end.
    pub start: u64,
    pub end: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, output_dir: &str) -> Self {
        let versions = [("orgsim".to_string(), env!("CARGO_PKG_VERSION").to_string())].into();
        Self {
            command: command.to_string(),
            scenario: None,
            seed: None,
            output_dir: output_dir.to_string(),
            versions,
            config_sha256: None,
            start: 0,
            end: 0,
            outputs: Vec::new(),
        }
    }

    pub fn with_config(mut self, path: &str, bytes: &[u8]) -> Self {
        self.scenario = Some(path.to_string());
        self.config_sha256 = Some(sha256_hex(bytes));
        self
    }

    /// True when `bytes` are the config this manifest was written for.
    pub fn matches_config(&self, bytes: &[u8]) -> bool {
        self.config_sha256.as_deref() == Some(sha256_hex(bytes).as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_bytes() {
        let m = RunManifest::new("orchestrate", "out").with_config("a.toml", b"x = 1\n");
        assert!(m.matches_config(b"x = 1\n"));
        assert!(!m.matches_config(b"x = 2\n"));
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
