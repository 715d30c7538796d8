use std::path::PathBuf;

use thiserror::Error;

use crate::tensor_io::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure categories, mapped one-to-one onto CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ErrorClass {
    Config = 1,
    Data = 2,
    Io = 3,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Format {
        path: String,
        #[source]
        source: FormatError,
    },

    #[error("{}:{line}: {message}", path.display())]
    Csv {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: empty file", .0.display())]
    EmptyFile(PathBuf),

    #[error("{}: no pairs", .0.display())]
    NoPairs(PathBuf),

    #[error("duplicate {what} id {id:?}")]
    DuplicateId { what: &'static str, id: String },

    #[error("invalid id {0:?} (allowed characters: A-Z a-z 0-9 _ . / -)")]
    InvalidId(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("kind mismatch: {0}")]
    KindMismatch(String),

    #[error("no quality score for image {0:?}")]
    MissingQuality(String),

    #[error("curve undefined at ratio {ratio}: no surviving genuine pairs")]
    UndefinedCurvePoint { ratio: f64 },

    #[error("evaluator failed{}: {message}", channel.map(|c| format!(" on channel {c}")).unwrap_or_default())]
    Evaluator {
        channel: Option<usize>,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Manifest(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class() as i32
    }
}
