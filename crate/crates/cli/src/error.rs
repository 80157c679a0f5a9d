use std::path::PathBuf;

use strange_marl::{Error, NnError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed metrics file: {msg}", path.display())]
    Metrics { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] Error),
    #[error("sweep failed for seeds {seeds:?}; completed runs were kept ({first})")]
    Sweep { seeds: Vec<u64>, first: Box<CliError> },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit codes, one per error category.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const DIVERGED: i32 = 4;
    pub const CHECKPOINT: i32 = 5;
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } | CliError::Metrics { .. } => exit::IO,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Layout(_) => exit::CONFIG,
                Error::Io(_) => exit::IO,
                Error::NonFinite(_) => exit::DIVERGED,
                Error::Nn(NnError::Checkpoint(_)) => exit::CHECKPOINT,
                _ => exit::OTHER,
            },
            CliError::Sweep { first, .. } => first.exit_code(),
        }
    }
}
