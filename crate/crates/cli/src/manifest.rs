//! Run manifests: what a command was asked to do, a content hash of
//! everything it read, and what it wrote.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use catanet_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    /// Resolved arguments, including defaults.
    pub parameters: Value,
    /// Hash over the parameters and every input file (see [`InputHasher`]).
    pub input_hash: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    /// Files written, relative to the run directory.
    pub outputs: Vec<String>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Tree hash in the style of git: each file contributes
/// `sha256("blob <len>\0" + bytes)`, and the run hash covers the sorted
/// `(logical path, blob hash)` list plus the canonical parameter JSON.
#[derive(Debug, Default)]
pub struct InputHasher {
    entries: Vec<(String, String)>,
}

fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()));
    h.update(bytes);
    hex::encode(h.finalize())
}

impl InputHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_file(&mut self, label: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.entries.push((label.to_string(), blob_hash(&bytes)));
        Ok(())
    }

    /// Adds every file below `dir`, labelled by `label/relative/path`.
    /// Run manifests inside the tree are skipped since they hold timestamps.
    pub fn add_dir(&mut self, label: &str, dir: &Path) -> Result<()> {
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
                let path = entry.map_err(|e| Error::io(&d, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.file_name().is_some_and(|n| n != RUN_MANIFEST_FILE) {
                    let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                    self.add_file(&format!("{label}/{rel}"), &path)?;
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self, parameters: &Value) -> String {
        self.entries.sort();
        let mut h = Sha256::new();
        h.update(blob_hash(parameters.to_string().as_bytes()));
        for (label, blob) in &self.entries {
            h.update(format!("\n{label} {blob}"));
        }
        hex::encode(h.finalize())
    }
}

/// Lists files under `dir` relative to it, sorted, excluding the manifest itself.
pub fn list_outputs(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                if rel != RUN_MANIFEST_FILE {
                    out.push(rel);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }
}
