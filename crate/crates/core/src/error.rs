use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the recourse pipeline.
///
/// The variants are grouped so that callers (the CLI in particular) can map
/// them onto coarse exit categories with [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("shape mismatch at layer {layer}: expected input width {expected}, got {actual}")]
    LayerShape {
        layer: usize,
        expected: usize,
        actual: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}")]
    Numeric { op: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("{0}")]
    InvalidData(String),

    #[error("model file malformed at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unsupported version: {0}")]
    UnsupportedVersion(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(op: impl Into<String>) -> Self {
        Error::Numeric { op: op.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Numeric { .. } => ErrorCategory::Numeric,
            Error::Config(_) => ErrorCategory::Usage,
            _ => ErrorCategory::Data,
        }
    }
}
