use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the basis-risk library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at row {row}: column `{column}` has invalid value {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("unbalanced panel: {0}")]
    Unbalanced(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("metadata error: {0}")]
    Metadata(String),

    #[error("zone `{zone}` not found at level {level}")]
    ZoneNotFound { level: String, zone: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("matrix is not symmetric (max relative asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("degenerate index: {0}")]
    DegenerateIndex(String),

    #[error("degenerate zone: {0}")]
    DegenerateZone(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error for field `{field}`: {message}")]
    Numeric { field: String, message: String },
}

impl Error {
    /// True for errors caused by malformed or inconsistent user input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::MissingColumn(_)
                | Error::Parse { .. }
                | Error::Unbalanced(_)
                | Error::InvalidPanel(_)
                | Error::Metadata(_)
                | Error::ZoneNotFound { .. }
                | Error::Dimension(_)
                | Error::InvalidArgument(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
