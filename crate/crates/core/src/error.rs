use std::path::PathBuf;

/// Errors raised across the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("site layout impossible: {0}")]
    LayoutImpossible(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("field not evaluable: {0}")]
    NotEvaluable(String),

    #[error("grids are incompatible: {0}")]
    IncompatibleGrids(String),

    #[error("resolution rule violated: {0}")]
    Resolution(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
