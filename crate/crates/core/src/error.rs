use thiserror::Error;

/// Errors raised by the model, solvers and Monte Carlo oracle.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),

    #[error("orthogonal pilots require tau >= K (tau = {tau}, K = {users})")]
    OrthogonalImpossible { tau: usize, users: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("receiver vector of user {0} is zero")]
    ZeroVector(usize),

    #[error("interference-plus-noise matrix of user {0} is not positive definite")]
    SingularDenominator(usize),

    #[error("Monte Carlo standard error target not met: {0}")]
    InsufficientSamples(String),

    #[error("empty input")]
    EmptyInput,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
