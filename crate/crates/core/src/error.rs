use thiserror::Error;

/// Errors raised anywhere in the estimation and forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("domain error: series `{series}` has non-positive level {value} at index {index}")]
    Domain {
        series: String,
        index: usize,
        value: f64,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("GAMP diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
