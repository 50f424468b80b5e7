use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid offspring distribution: {0}")]
    InvalidDistribution(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("solver failed to converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("node budget of {budget} exceeded while realizing depth {depth}")]
    Resource { budget: usize, depth: u32 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A Monte Carlo estimate whose acceptance or certification rate fell
    /// below the usable threshold.
    #[error("inconclusive estimate: {reason} (rate {rate:.4})")]
    Inconclusive { reason: String, rate: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
