use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Hurst parameter {0} outside (1/4, 1)")]
    InvalidHurst(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("integrand regularity does not match the regime: {0}")]
    Regularity(String),
    #[error("tensor of {cells} cells exceeds the limit of {limit}")]
    MemoryBound { cells: u128, limit: u128 },
    #[error("convergence failure: {0}")]
    Convergence(String),
    #[error("factorization failure: {0}")]
    Factorization(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
