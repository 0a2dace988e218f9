use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid torus: {0}")]
    InvalidSpec(String),
    #[error("grid of {m} points per axis is below the required {required}")]
    GridTooSmall { m: usize, required: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("reweighting failed: {0}")]
    Reweighting(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("observer failed at step {step}: {message}")]
    Observer { step: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
