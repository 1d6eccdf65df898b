use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid point pattern: {0}")]
    InvalidPattern(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("intensity evaluation is not finite for theta = {theta:?}")]
    Evaluation { theta: Vec<f64> },
    #[error("invalid lag grid: {0}")]
    InvalidGrid(String),
    #[error("need at least {needed} points, pattern has {found}")]
    InsufficientPoints { needed: usize, found: usize },
    #[error("weighting intensity at point {index} must be positive and finite, got {value}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("point index {index} out of range for a pattern of {n} points")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("diagnostics failed: {0}")]
    Diagnostics(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
