//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A malformed input line (CSV rows, config entries, cache records).
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An event referenced a channel missing from the run's catalog.
    #[error("line {line}: unknown channel `{channel}`")]
    UnknownChannel { line: usize, channel: String },

    /// A parameter outside its documented range (`tau <= 0`, `k = 0`, ...).
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A caller violated an API contract (mismatched binning specs,
    /// out-of-window timestamps, swapped orientations).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data too degenerate to proceed (empty feature sets, collapsed
    /// models, all-zero training maxima).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A persisted file is unreadable or internally inconsistent.
    #[error("{}: {msg}", path.display())]
    File { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A pipeline stage failed; wraps the underlying error with the stage name.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tag an error with the pipeline stage it surfaced in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
