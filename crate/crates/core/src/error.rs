//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A pmf cell or model factor violated the nonnegativity constraints.
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    /// The distribution is degenerate where a nondegenerate one is required.
    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    /// A function evaluated to a non-finite value at a probe point.
    #[error("non-finite evaluation: {0}")]
    NonFinite(String),

    /// Numerical quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    /// Malformed or empty input data.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A simulation scenario has no feasible dependence structure.
    #[error("infeasible scenario: {0}")]
    Infeasible(String),

    /// Design matrix does not have full column rank.
    #[error("rank deficient design: {0}")]
    RankDeficient(String),
}

pub type Result<T> = std::result::Result<T, Error>;
