use thiserror::Error;

/// Errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates one of its invariants.
    #[error("invalid config: key `{key}`: {constraint}")]
    Config { key: String, constraint: String },

    /// A requested target cannot be met (e.g. BER target below the
    /// phase-noise-free floor).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Rejection sampling exhausted its attempt budget.
    #[error("sampling budget exceeded: {0}")]
    SamplingBudget(String),

    /// A linear system could not be factorized.
    #[error("linear algebra: {0}")]
    Linalg(String),

    /// I/O while reading a config or writing artifacts.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            constraint: constraint.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
