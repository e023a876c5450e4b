use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument {value} outside of the domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("price {value} outside of the strategy range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("competitor distribution is degenerate at c = {0} (H(c) = 1 for c < 1)")]
    SingularPrior(f64),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("infeasible parameter vector, violated constraints {violated:?}")]
    Infeasible { violated: Vec<usize> },

    #[error("feasible set is empty for delta = {0} (need 0 < delta <= 1)")]
    EmptySet(f64),

    #[error("usage: {0}")]
    Usage(String),

    #[error("linear program is infeasible, no certificate exists for this grid")]
    NoCertificate,

    #[error("linear program is unbounded, the grid is too coarse")]
    GridTooCoarse,

    #[error("certificate search failed: {0}")]
    SearchFailed(String),

    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),

    #[error("schedule violates the step-size conditions: {0:?}")]
    Schedule(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
