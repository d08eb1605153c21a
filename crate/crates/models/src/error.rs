#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] sparsepose_core::Error),

    #[error("tensor backend: {0}")]
    Candle(#[from] candle_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value outside the domain: {0}")]
    Domain(String),

    #[error("invalid transition schedule: {0}")]
    Schedule(String),

    #[error("z_t = {z_t} is unreachable from z_0 = {z0} at step {t}")]
    InconsistentPair { z_t: usize, z0: usize, t: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
