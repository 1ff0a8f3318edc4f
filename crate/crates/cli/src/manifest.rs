use std::path::{Path, PathBuf};
use std::time::Instant;

use karmalevel::{Error, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Artifact {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Record of one command run, written beside its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub elapsed_s: f64,
}

pub struct Recorder {
    command: &'static str,
    started: Instant,
    inputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Recorder {
            command,
            started: Instant::now(),
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Hashes inputs and outputs and writes the manifest to `at`.
    pub fn finish(self, at: &Path, config: Value, seed: Option<u64>, outputs: &[PathBuf]) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            inputs: self.inputs.iter().map(|p| Artifact::of(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| Artifact::of(p)).collect::<Result<_>>()?,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        };
        let body = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(at, body + "\n").map_err(|e| Error::io(at, e))
    }
}

/// `out.jsonl` → `out.jsonl.manifest.json`.
pub fn beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    file.with_file_name(name)
}
