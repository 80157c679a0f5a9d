use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed { seeds: Vec<u64>, error: String },
}

/// Written before training starts and updated when it ends. Together with
/// the checkpoint it is enough to reproduce every logged number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Resolved config text, byte-identical to the `config.toml` written
    /// next to it.
    pub config: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub metrics_files: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, config: String, seeds: Vec<u64>, out_dir: &Path, metrics_files: Vec<PathBuf>) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: hex::encode(Sha256::digest(config.as_bytes())),
            config,
            seeds,
            out_dir: out_dir.to_path_buf(),
            metrics_files,
            started_unix: unix_now(),
            finished_unix: None,
            status: RunStatus::Running,
        }
    }

    pub fn finish(&mut self, status: RunStatus) {
        self.finished_unix = Some(unix_now());
        self.status = status;
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(CliError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
