//! Run manifest: content digests for every artifact the pipeline
//! writes, plus per-stage cache keys so an unchanged configuration
//! skips recomputation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Pipeline {
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(sha256_hex(&bytes))
}

/// Digest of a serializable value's canonical JSON; struct field order
/// makes the encoding deterministic.
pub fn value_digest<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("serializable").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of the config subsections and tool version the stage
    /// depends on.
    pub key: String,
    pub wall_ms: u64,
    pub outputs: Vec<FileRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    /// Loads the run directory's manifest if present. Stage records
    /// survive config changes; stale ones fail their key check.
    pub fn load_or_default(out: &Path) -> RunManifest {
        let path = out.join(MANIFEST_FILE);
        match std::fs::read_to_string(&path) {
            Ok(body) => serde_json::from_str(&body).unwrap_or_default(),
            Err(_) => RunManifest::default(),
        }
    }

    pub fn save(&self, out: &Path) -> Result<(), CliError> {
        let path = out.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, body + "\n").map_err(|e| CliError::Pipeline {
            message: format!("{}: {e}", path.display()),
        })
    }

    /// A stage is fresh when its recorded key matches and every
    /// recorded output still exists with a matching content digest.
    pub fn stage_fresh(&self, out: &Path, stage: &str, key: &str) -> bool {
        let Some(record) = self.stages.get(stage) else { return false };
        if record.key != key {
            return false;
        }
        record.outputs.iter().all(|f| {
            let path = out.join(&f.path);
            matches!(file_digest(&path), Ok(d) if d == f.sha256)
        })
    }

    pub fn record_stage(
        &mut self,
        out: &Path,
        stage: &str,
        key: &str,
        wall_ms: u64,
        output_paths: &[PathBuf],
    ) -> Result<(), CliError> {
        let mut outputs = Vec::with_capacity(output_paths.len());
        for path in output_paths {
            let rel = path
                .strip_prefix(out)
                .unwrap_or(path)
                .to_string_lossy()
                .replace(std::path::MAIN_SEPARATOR, "/");
            outputs.push(FileRecord { path: rel, sha256: file_digest(path)? });
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord { key: key.to_string(), wall_ms, outputs },
        );
        Ok(())
    }
}
