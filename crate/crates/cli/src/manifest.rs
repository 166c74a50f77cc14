//! Run manifests: what was run, on which inputs, producing which outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Option<FileDigest>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn now() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64);
    DateTime::<Utc>::from_timestamp(secs, 0)
        .unwrap_or_default()
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Collects inputs while a command runs, then digests everything at the end.
pub struct Recorder {
    command: String,
    seed: u64,
    config: Option<PathBuf>,
    inputs: Vec<PathBuf>,
    started_at: String,
}

impl Recorder {
    pub fn new(command: &str, seed: u64, config: Option<&Path>) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config: config.map(Path::to_path_buf),
            inputs: Vec::new(),
            started_at: now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
    }

    /// Writes `manifest.json` into `out_dir`. Output paths are relative to it.
    pub fn finish(self, out_dir: &Path, outputs: &[PathBuf]) -> Result<PathBuf> {
        let digest = |p: &Path, shown: String| -> Result<FileDigest> {
            Ok(FileDigest {
                path: shown,
                sha256: sha256_file(p)?,
            })
        };
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self
                .config
                .as_deref()
                .map(|p| digest(p, p.display().to_string()))
                .transpose()?,
            inputs: self
                .inputs
                .iter()
                .map(|p| digest(p, p.display().to_string()))
                .collect::<Result<_>>()?,
            outputs: outputs
                .iter()
                .map(|p| {
                    let shown = p.strip_prefix(out_dir).unwrap_or(p).display().to_string();
                    digest(p, shown)
                })
                .collect::<Result<_>>()?,
            started_at: self.started_at,
            finished_at: now(),
        };
        let path = out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
