use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file that its matching writer could not have produced.
    #[error("{format} format error in field `{field}`: {detail}")]
    Format {
        format: &'static str,
        field: &'static str,
        detail: String,
    },

    #[error("row {row}: {detail}")]
    Parse { row: u64, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no valid window origin in mask")]
    EmptyMask,

    #[error("instance too large for exhaustive oracle: {work} > {limit}")]
    OracleScale { work: u64, limit: u64 },

    #[error("sampling exhausted after {attempts} attempts: {detail}")]
    SamplingExhausted { attempts: u64, detail: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            field,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(detail: impl Into<String>) -> Self {
        Error::Domain(detail.into())
    }
}
