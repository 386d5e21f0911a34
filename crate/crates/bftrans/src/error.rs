use thiserror::Error;

/// Crate-wide error type. Every failure path maps to one of these variants so
/// the CLI can print a single machine-parsable line and exit nonzero.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dim(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("missing parameter '{0}'")]
    MissingParam(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("init error: {0}")]
    Init(String),
    #[error("gradcheck failure: {0}")]
    Gradcheck(String),
    #[error("training aborted at iteration {iter}: {reason}")]
    TrainAbort { iter: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dim(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
