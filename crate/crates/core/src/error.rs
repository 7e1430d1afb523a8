use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle {angle} rad is too close to pi for a stable logarithm")]
    AngleNearPi { angle: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid counts: s={s}, n={n}")]
    InvalidCounts { s: u64, n: u64 },

    #[error("vertex {0} already exists")]
    DuplicateId(u64),

    #[error("unknown vertex {0}")]
    UnknownVertex(u64),

    #[error("invalid edge: {0}")]
    InvalidEdge(String),

    #[error("graph has no active vertices")]
    NoActiveVertices,

    #[error("no trajectory pairs could be associated")]
    AssociationEmpty,

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("run log contains no submaps")]
    EmptyLog,

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid value for `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse { line, reason: reason.into() }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
