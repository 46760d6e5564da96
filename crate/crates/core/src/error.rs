use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: missing column `{column}`")]
    MissingColumn { column: String },

    #[error("record error at line {line}: {message}")]
    Record { line: u64, message: String },

    #[error("malformed report: {0}")]
    Report(String),

    /// A metric has no value for this input (e.g. zero n-grams at some order).
    #[error("{metric} is undefined: {reason}")]
    UndefinedMetric { metric: String, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate vector: zero norm")]
    DegenerateVector,

    #[error("embedding training failed: {0}")]
    Training(String),

    #[error("rating segment {rating} has no reviews")]
    EmptySegment { rating: u8 },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unparseable completion: {0}")]
    Completion(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn undefined(metric: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::UndefinedMetric {
            metric: metric.into(),
            reason: reason.into(),
        }
    }

    /// Schema and record problems in input files.
    pub fn is_schema(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn { .. } | Error::Record { .. } | Error::Report(_)
        )
    }

    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_))
    }
}
