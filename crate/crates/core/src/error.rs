use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while opening a slide pyramid or reading its tiles.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("pyramid {path}: missing level with downsample factor {factor}")]
    MissingLevel { path: PathBuf, factor: u32 },
    #[error("pyramid {path}: {detail}")]
    DimensionMismatch { path: PathBuf, detail: String },
    #[error("corrupt tile {path}: {detail}")]
    CorruptTile { path: PathBuf, detail: String },
    #[error("invalid metadata in {path}: {detail}")]
    BadMetadata { path: PathBuf, detail: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("unknown slide '{0}'")]
    UnknownSlide(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("confidence interval undefined: {0}")]
    CiUndefined(String),
    #[error("classifier failed at cell (row {row}, col {col}): {source}")]
    Cell {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error classes, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Argument(_) | Error::Config(_) => ErrorClass::Usage,
            Error::Numeric(_) | Error::CiUndefined(_) => ErrorClass::Numeric,
            Error::Cell { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
