use thiserror::Error;

/// Errors raised by the numeric substrate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension error in {op}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl NnError {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        NnError::Dimension {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

/// Top-level error for environments, learners and the training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("environment usage error: {0}")]
    EnvUsage(String),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("invalid episode: {0}")]
    Episode(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
