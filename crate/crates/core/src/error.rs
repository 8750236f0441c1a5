use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("model container error at offset {offset}: {message}")]
    Container { offset: u64, message: String },

    #[error("vocabulary fingerprint mismatch: model has {expected:016x}, corpus has {found:016x}")]
    VocabMismatch { expected: u64, found: u64 },

    #[error("config fingerprint mismatch: artifact {artifact} was produced under {found}, current config expects {expected}")]
    FingerprintMismatch {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error("unrepresentable record: {0}")]
    Unrepresentable(String),

    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short identifier used by the command-line tool.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "format",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Container { .. } => "format",
            Error::VocabMismatch { .. } => "fingerprint",
            Error::FingerprintMismatch { .. } => "fingerprint",
            Error::Unrepresentable(_) => "data",
            Error::Data(_) => "data",
        }
    }
}
