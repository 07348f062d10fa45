use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token budget exceeded: {needed} tokens > budget {budget}")]
    Budget { needed: usize, budget: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("prediction/gold turn sets are misaligned; unmatched keys: {}", .0.join(", "))]
    Misaligned(Vec<String>),

    #[error("training diverged at step {step} (last good checkpoint: {})",
        .last_checkpoint.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    Diverged { step: usize, last_checkpoint: Option<PathBuf> },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
