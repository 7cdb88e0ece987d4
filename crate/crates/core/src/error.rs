use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("inconsistent marginals (max deviation {max_deviation:.3e})")]
    Consistency { max_deviation: f64 },

    #[error("solver did not converge: {context} (residual {residual:.3e})")]
    Convergence { context: String, residual: f64 },

    #[error("degenerate family: {0}")]
    Degeneracy(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("resource guard exceeded: {what} needs {required}, limit {limit}")]
    Guard {
        what: String,
        required: u128,
        limit: u128,
    },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
