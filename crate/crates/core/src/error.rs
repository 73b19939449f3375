use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("unsupported instance: {0}")]
    Unsupported(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("privacy budget exhausted: cumulative {cumulative_nats:.6e} nats, requested {requested_nats:.6e}, MIA bound {mia_bound:.4}")]
    BudgetExhausted { cumulative_nats: f64, requested_nats: f64, mia_bound: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}
