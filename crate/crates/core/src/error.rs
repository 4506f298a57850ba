use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic, unknown version or an impossible header value.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// The byte stream ended early or its checksum does not match.
    #[error("corrupt data at byte {offset}: {message}")]
    Corrupt { offset: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range 1..={len}")]
    Bounds { index: usize, len: usize },

    #[error("batch of size {0} is too small; at least 2 rows are required")]
    BatchTooSmall(usize),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("labels missing from one side of the join: {}", .0.join(", "))]
    MissingLabels(Vec<String>),

    #[error("csv error: {0}")]
    Csv(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that come from reading or writing bytes rather than
    /// from rejected values.
    pub fn is_io_or_format(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Format { .. } | Error::Corrupt { .. } | Error::Csv(_)
        )
    }

    /// Byte offset attached to a format or corruption error.
    pub fn offset(&self) -> Option<u64> {
        match self {
            Error::Format { offset, .. } | Error::Corrupt { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}
