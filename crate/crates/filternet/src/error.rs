//! Crate-wide error type.

use std::fmt;

/// Errors produced by any stage of the pipeline.
#[derive(Debug)]
pub enum Error {
    /// Tensor/signal dimensions do not line up.
    Shape(String),
    /// Invalid or inconsistent configuration.
    Config(String),
    /// A CSV cell failed to parse; carries the 1-based data row and the
    /// column name.
    Parse { row: usize, col: String, msg: String },
    /// Underlying I/O failure with the path involved.
    Io { path: String, source: std::io::Error },
    /// A NaN or infinity showed up where finite values are required.
    NonFinite(String),
    /// Checkpoint file is malformed, truncated, or fails its digest.
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Config(msg) => write!(f, "invalid config: {msg}"),
            Error::Parse { row, col, msg } => {
                write!(f, "parse error at row {row}, column '{col}': {msg}")
            }
            Error::Io { path, source } => write!(f, "io error on '{path}': {source}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True when the root cause is a missing file (drives the CLI exit code).
    pub fn is_missing_file(&self) -> bool {
        matches!(self, Error::Io { source, .. }
            if source.kind() == std::io::ErrorKind::NotFound)
    }

    /// Prefix an error message with the pipeline stage it came from.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::Shape(m) => Error::Shape(format!("[{stage}] {m}")),
            Error::Config(m) => Error::Config(format!("[{stage}] {m}")),
            Error::NonFinite(m) => Error::NonFinite(format!("[{stage}] {m}")),
            other => other,
        }
    }
}
