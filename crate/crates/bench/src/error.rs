//! Error types and their process exit codes.

use std::fmt;
use std::io;
use std::path::Path;

/// Errors from dataset files (IDX images, dataset cache).
#[derive(Debug)]
pub enum DataError {
    Io { path: String, source: io::Error },
    BadMagic { expected: String, found: String },
    Truncated { expected: usize, found: usize },
    DimMismatch { detail: String },
}

impl DataError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), source }
    }
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io { path, source } => write!(f, "{path}: {source}"),
            DataError::BadMagic { expected, found } => {
                write!(f, "expected {expected} magic, found {found}")
            }
            DataError::Truncated { expected, found } => {
                write!(f, "truncated or oversized file: expected {expected} bytes, found {found}")
            }
            DataError::DimMismatch { detail } => write!(f, "dimension mismatch: {detail}"),
        }
    }
}

impl std::error::Error for DataError {}

/// Top-level benchmark errors, mapped to CLI exit codes.
#[derive(Debug)]
pub enum BenchError {
    /// Invalid configuration (exit code 2).
    Config(String),
    /// Dataset or output file problem (exit code 3).
    Data(DataError),
    /// Numeric failure during training (exit code 4).
    Numeric(String),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Data(_) => 3,
            BenchError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::Config(msg) => write!(f, "configuration error: {msg}"),
            BenchError::Data(e) => write!(f, "data error: {e}"),
            BenchError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl std::error::Error for BenchError {}

impl From<DataError> for BenchError {
    fn from(e: DataError) -> Self {
        BenchError::Data(e)
    }
}
