//! Stage manifest: for every completed stage the hash of its config section,
//! the hashes of the upstream artifacts it consumed, the hashes of the files
//! it produced, a timestamp, and free-form stats. A stage whose config hash,
//! input hashes and outputs all still match is a cache hit and is skipped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clients::file_sha256;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct StageEntry {
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timestamp: String,
    #[serde(default)]
    pub stats: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageEntry>,
}

impl Manifest {
    pub fn path(artifacts_dir: &Path) -> PathBuf {
        artifacts_dir.join("manifest.json")
    }

    pub fn load(artifacts_dir: &Path) -> Result<Self> {
        let path = Self::path(artifacts_dir);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::Format {
            path,
            message: e.to_string(),
        })
    }

    pub fn save(&self, artifacts_dir: &Path) -> Result<()> {
        let path = Self::path(artifacts_dir);
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
    }

    /// True when the stage completed before with the same config and inputs
    /// and all of its recorded outputs still exist unchanged.
    pub fn is_fresh(
        &self,
        stage: &str,
        config_hash: &str,
        input_hashes: &BTreeMap<String, String>,
    ) -> bool {
        let Some(entry) = self.stages.get(stage) else {
            return false;
        };
        if entry.config_hash != config_hash || &entry.input_hashes != input_hashes {
            return false;
        }
        entry.outputs.iter().all(|(file, recorded)| {
            let path = PathBuf::from(file);
            matches!(file_sha256(&path), Ok(actual) if &actual == recorded)
        })
    }

    /// Records a completed stage: hashes every produced file and persists the
    /// manifest.
    pub fn record(
        &mut self,
        artifacts_dir: &Path,
        stage: &str,
        config_hash: String,
        input_hashes: BTreeMap<String, String>,
        output_files: &[PathBuf],
        stats: BTreeMap<String, serde_json::Value>,
    ) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for file in output_files {
            outputs.insert(file.to_string_lossy().into_owned(), file_sha256(file)?);
        }
        self.stages.insert(
            stage.to_string(),
            StageEntry {
                config_hash,
                input_hashes,
                outputs,
                timestamp: chrono::Utc::now().to_rfc3339(),
                stats,
            },
        );
        self.save(artifacts_dir)
    }
}

/// Hash of a config section (any serializable value) plus the global seed.
pub fn config_hash<T: Serialize>(seed: u64, section: &T) -> String {
    let body = serde_json::to_string(section).expect("section serializes");
    crate::clients::DiskCache::content_key(&format!("{seed}\n{body}"))
}

/// Hashes named upstream artifacts, mapping each missing one to the stage
/// that should have produced it.
pub fn hash_inputs(files: &[(&str, PathBuf)]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (producer_stage, path) in files {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                stage: producer_stage.to_string(),
            });
        }
        out.insert(path.to_string_lossy().into_owned(), file_sha256(path)?);
    }
    Ok(out)
}
