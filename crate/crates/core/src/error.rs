use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("score: {0}")]
    Score(String),

    #[error("notes {first} and {second} overlap")]
    Overlap { first: usize, second: usize },

    #[error("expansion: note {note} has {frames} frames, needs at least {needed}")]
    Expansion {
        note: usize,
        frames: usize,
        needed: usize,
    },

    #[error("format: {0}")]
    Format(String),

    #[error("unsupported version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        expected: impl std::fmt::Debug,
        actual: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            op,
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input rather than an internal fault.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFinite { .. } | Error::Io { .. })
    }
}
