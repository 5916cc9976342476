use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HexstError {
    /// Caller supplied values outside an operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// Shapes or configurations that do not fit together.
    #[error("structural mismatch: {0}")]
    Structural(String),

    /// Derived geometry (more than one input point at identical location, zero spacing, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An internal contract was violated, e.g. a spot fell outside its window's slot set.
    #[error("consistency violation: {0}")]
    Consistency(String),

    #[error("slot collision: spots {first} and {second} both map to slot {slot} of window {window}")]
    SlotCollision {
        window: usize,
        slot: usize,
        first: usize,
        second: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl HexstError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HexstError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        HexstError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, HexstError>;
