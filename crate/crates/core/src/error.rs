use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape coordinate s = {s} is outside the model domain (s > {s_min})")]
    Domain { s: f64, s_min: f64 },

    #[error("trajectory left the model domain at t = {time}: s = {s}")]
    DomainExit { time: f64, s: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("newton iteration failed: {reason} (last residual {residual:e})")]
    Newton { reason: String, residual: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("derivative check failed: {0}")]
    DerivativeMismatch(String),

    #[error("optimizer did not converge: {0}")]
    NotConverged(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
