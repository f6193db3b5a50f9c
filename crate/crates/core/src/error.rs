use thiserror::Error;

/// Errors raised by model assembly, the steady-state solvers, and the
/// stochastic integrators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("drift matrix is not Hurwitz (max real part of spectrum {max_real_part:.6e})")]
    Unstable { max_real_part: f64 },

    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),

    #[error("unphysical state: {0}")]
    Unphysical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no bracketing interval: {0}")]
    NoBracket(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
