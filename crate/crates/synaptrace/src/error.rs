use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a PSVT tensor file")]
    BadMagic,
    #[error("truncated {what}: need {needed} bytes, found {found}")]
    Truncated { what: &'static str, needed: u64, found: u64 },
    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),
    #[error("degenerate shape {0:?}")]
    DegenerateShape(Vec<u64>),
    #[error("invalid tensor header: {0}")]
    InvalidHeader(String),
    #[error("{0} trailing bytes after tensor payload")]
    TrailingBytes(u64),
    #[error("unexpected tensor {what}: expected {expected}, found {found}")]
    TensorMismatch { what: &'static str, expected: String, found: String },
    #[error("invalid JSON in {what}: {source}")]
    Json {
        what: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] synaptrace_core::Error),
    #[error("incomplete chain at {path}: missing {missing}")]
    IncompleteChain { path: PathBuf, missing: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("gradient check failed: max relative error {0:e}")]
    GradientCheck(f64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(what: impl std::fmt::Display, source: serde_json::Error) -> Self {
        Error::Json { what: what.to_string(), source }
    }

    /// Process exit code: 1 for validation errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
