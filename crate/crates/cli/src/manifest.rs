//! Reproducibility manifest kept at the root of every artifact directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub seeds: BTreeMap<String, u64>,
    /// Checkpoint name → SHA-256 of its bytes.
    pub checkpoints: BTreeMap<String, String>,
    /// Path relative to the artifact root → SHA-256.
    pub artifacts: BTreeMap<String, String>,
    /// Step → wall-clock seconds of its latest execution.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        Self {
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: BTreeMap::new(),
            checkpoints: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Loads the manifest of `root`, or starts one. An existing manifest must
    /// belong to the same configuration.
    pub fn open(root: &Path, config_hash: &str) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config_hash.to_string()));
        }
        let manifest: RunManifest = serde_json::from_slice(&std::fs::read(&path)?)
            .map_err(|e| CliError::Integrity(format!("unreadable manifest: {e}")))?;
        if manifest.config_hash != config_hash {
            return Err(CliError::Integrity(format!(
                "{} was produced by a different configuration",
                root.display()
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        swaphedge::io::write_json(&root.join(MANIFEST_FILE), self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reopening_checks_the_config_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("abc".into());
        m.seeds.insert("oos".into(), 7);
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::open(dir.path(), "abc").unwrap(), m);
        assert!(matches!(RunManifest::open(dir.path(), "def"), Err(CliError::Integrity(_))));
    }
}
