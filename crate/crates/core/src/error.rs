use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the screening library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("series for {what} did not settle within {cap} terms")]
    SeriesTruncated { what: &'static str, cap: usize },

    #[error("quadrature rule size {requested} exceeds the cap of {cap} points")]
    RuleTooLarge { requested: usize, cap: usize },

    #[error("pruning at fraction {0} removed every quadrature point")]
    PrunedAway(f64),

    #[error("covariance decomposition failed: {0}")]
    Decomposition(String),

    #[error("singular Hessian: {0}")]
    SingularHessian(String),

    #[error("non-finite objective value at {0:?}")]
    NonFinite(Vec<f64>),

    #[error("numerical integration did not converge: {0}")]
    Integration(String),

    #[error("row {row}: {source}")]
    Row {
        row: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Attach a row identifier to an error raised while processing that row.
    pub fn in_row(self, row: impl Into<String>) -> Self {
        Error::Row {
            row: row.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
