use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects artifacts as they are written, then emits the manifest last.
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
    started: Instant,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(CliError::io(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(CliError::io(&path))?;
        // Digest what landed on disk, not what we meant to write.
        let on_disk = std::fs::read(&path).map_err(CliError::io(&path))?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(&on_disk),
            bytes: on_disk.len() as u64,
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(format!("{name}: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(self, command: &str, config: &ExperimentConfig) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            artifacts: self.artifacts,
        };
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(CliError::io(&path))?;
        Ok(manifest)
    }
}

/// Artifacts whose digest or size no longer matches the file on disk.
pub fn verify(root: &Path, manifest: &RunManifest) -> Vec<String> {
    manifest
        .artifacts
        .iter()
        .filter(|a| match std::fs::read(root.join(&a.path)) {
            Ok(b) => sha256_hex(&b) != a.sha256 || b.len() as u64 != a.bytes,
            Err(_) => true,
        })
        .map(|a| a.path.clone())
        .collect()
}
