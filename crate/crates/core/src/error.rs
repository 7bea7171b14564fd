use std::path::Path;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("undefined rate: population is zero")]
    UndefinedRate,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema mismatch in {file}: missing required column `{column}`")]
    MissingColumn { file: String, column: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("cannot estimate cluster variance from one cluster")]
    SingleCluster,

    #[error("fold {fold} failed: {reason}")]
    FoldFit { fold: usize, reason: String },

    #[error("identification abort: {0}")]
    Identification(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by malformed or missing user input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn { .. }
                | Error::InvalidInput(_)
                | Error::Config(_)
                | Error::Csv(_)
                | Error::Io { .. }
                | Error::Data(_)
                | Error::Domain(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
