use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no closed-form prox: {0}")]
    NoClosedFormProx(String),
    #[error("term is not coordinatewise separable")]
    NotSeparable,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("infeasible point: worst violation {worst:e}")]
    Infeasible { worst: f64 },
    #[error("iterate left the interior of the barrier domain")]
    InteriorViolation,
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("iteration budget exhausted: {0}")]
    Budget(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("subsolver failed at iteration {k}: {source}")]
    Subsolver { k: usize, source: Box<Error> },
}
