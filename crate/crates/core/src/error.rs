use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FrscnError>;

#[derive(Debug, Error)]
pub enum FrscnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("schema error: column `{0}` not found in header")]
    MissingColumn(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("unsupported model format version: expected `{expected}`, found `{found}`")]
    Version { expected: String, found: String },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl FrscnError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FrscnError::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        FrscnError::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FrscnError::Io {
            path: path.into(),
            source,
        }
    }
}
