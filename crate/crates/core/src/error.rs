use thiserror::Error;

/// Errors raised by the analysis library.
///
/// Schedulability failures are never errors; they are reported as
/// [`Verdict`](crate::analysis::Verdict) values.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("logic error: {0}")]
    Logic(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("task set file: {0}")]
    Format(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn logic(msg: impl Into<String>) -> Error {
    Error::Logic(msg.into())
}
