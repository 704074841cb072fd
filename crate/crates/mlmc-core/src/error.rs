use thiserror::Error;

/// Errors surfaced by partition construction, discretization, and the
/// multilevel pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),

    #[error("capacity exceeded: {what} has {got} states, cap is {cap}")]
    Capacity { what: String, got: u128, cap: u128 },

    #[error("point outside [-1,1)^d: coordinate {coord} is {value}")]
    OutOfDomain { coord: usize, value: f64 },

    #[error("level mismatch: {0}")]
    LevelMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid density: {0}")]
    BadDensity(String),

    #[error("matrix is not row-stochastic: {0}")]
    NotStochastic(String),

    #[error(
        "kernel leaks too much mass at row {row}: in-domain mass {mass:.3e}; \
         check the boundary policy"
    )]
    KernelLeakage { row: usize, mass: f64 },

    #[error("stationary density unavailable: {0}")]
    Stationary(String),

    #[error("chain is not reversible: max detailed-balance violation {max_violation:.3e}")]
    NotReversible { max_violation: f64 },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("malformed file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
