use std::path::PathBuf;

use thiserror::Error;

/// Library-level error. `Config` maps to exit code 2 at the CLI, everything
/// else to exit code 1.
#[derive(Debug, Error)]
pub enum TerlError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("replay buffer: {0}")]
    Replay(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv {path} at row {row}: {reason}")]
    Csv { path: PathBuf, row: usize, reason: String },
    #[error("{0}")]
    Runtime(String),
}

impl TerlError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        TerlError::Io { context: context.into(), source }
    }

    /// True for errors the CLI should report as invalid configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, TerlError::Config(_))
    }
}
