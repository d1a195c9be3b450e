//! Run manifest: every CLI command records what it ran, with which config and
//! seed, when, and the SHA-256 of every artifact it wrote.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub out_dir: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub config_toml: String,
    pub artifacts: Vec<ArtifactRecord>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).with_context(|| format!("hashing artifact {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Collects artifacts during a command run, then writes `run_manifest.toml`
/// into the output directory.
pub struct ManifestBuilder {
    manifest: RunManifest,
    artifact_paths: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, out_dir: &Path, config_toml: String) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                seed,
                out_dir: out_dir.display().to_string(),
                started_unix: unix_now(),
                finished_unix: 0,
                config_toml,
                artifacts: Vec::new(),
            },
            artifact_paths: Vec::new(),
        }
    }

    pub fn add_artifact(&mut self, path: &Path) {
        self.artifact_paths.push(path.to_path_buf());
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        for path in &self.artifact_paths {
            self.manifest.artifacts.push(ArtifactRecord {
                path: path.display().to_string(),
                sha256: sha256_file(path)?,
            });
        }
        self.manifest.finished_unix = unix_now();
        fs::create_dir_all(out_dir)?;
        let manifest_path = out_dir.join("run_manifest.toml");
        fs::write(
            &manifest_path,
            toml::to_string_pretty(&self.manifest).context("serializing run manifest")?,
        )?;
        Ok(manifest_path)
    }
}
