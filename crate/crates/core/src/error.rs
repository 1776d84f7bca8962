//! Error type shared by every estimation stage.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed input: mismatched lengths, non-finite values, bad parameters.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Basis evaluation produced entries beyond the representable range.
    #[error("ill-conditioned basis: {0}")]
    IllConditionedBasis(String),

    /// The balance constraints admit no positive-weight solution.
    #[error("balance constraints infeasible after {iterations} iterations (|Lambda| = {lambda_norm:.3e}, gradient max-norm = {gradient_norm:.3e})")]
    InfeasibleBalance {
        iterations: usize,
        lambda_norm: f64,
        gradient_norm: f64,
    },

    /// Dual objective overflowed while evaluating exp(-v-1).
    #[error("dual objective diverged: {0}")]
    Divergence(String),

    /// Iteration budget exhausted before the tolerance was met.
    #[error("{solver} did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// Weighted Gram matrix of the link gradients is singular.
    #[error("rank-deficient design: {0}")]
    RankDeficientDesign(String),

    /// A matrix that must be inverted is singular or badly conditioned.
    #[error("singular matrix in {context} (condition estimate {condition:.3e})")]
    SingularMatrix { context: &'static str, condition: f64 },

    /// Data ingestion failure (CSV parsing, missing columns).
    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    /// Stable machine-readable code used in CLI reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "E_INVALID_INPUT",
            Error::IllConditionedBasis(_) => "E_ILL_CONDITIONED_BASIS",
            Error::InfeasibleBalance { .. } => "E_BALANCE_INFEASIBLE",
            Error::Divergence(_) => "E_DIVERGENCE",
            Error::NotConverged { .. } => "E_NOT_CONVERGED",
            Error::RankDeficientDesign(_) => "E_RANK_DEFICIENT",
            Error::SingularMatrix { .. } => "E_SINGULAR_MATRIX",
            Error::Data(_) => "E_DATA",
        }
    }

    /// Process exit code: 3 for data problems, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Data(_) => 3,
            _ => 4,
        }
    }
}
