use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
///
/// Variants are grouped so front ends can map them onto exit codes:
/// configuration and schema problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("encoding error: unseen level {level} for variable `{variable}`")]
    Encoding { variable: String, level: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("diagonal dominance undefined: row {row} has zero off-diagonal mass")]
    ZeroOffDiagonal { row: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("solver diverged at iteration {iteration}: objective is not finite")]
    Divergence { iteration: usize },

    #[error("undefined SMR: {0}")]
    UndefinedSmr(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Schema(_)
            | Error::Data(_)
            | Error::Parse { .. }
            | Error::Encoding { .. }
            | Error::Dimension(_)
            | Error::Input(_)
            | Error::Serde(_) => ErrorKind::Data,
            Error::ZeroOffDiagonal { .. }
            | Error::UndefinedMetric(_)
            | Error::Divergence { .. }
            | Error::UndefinedSmr(_) => ErrorKind::Numeric,
            Error::Io { .. } => ErrorKind::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
    Io,
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
