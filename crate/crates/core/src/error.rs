use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("action {action} is not feasible in state {state}")]
    InfeasibleAction { state: usize, action: usize },

    #[error("time index {t} out of range for horizon {horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },

    #[error("sampling density vanishes at an observed draw (basis does not cover the noise support)")]
    SamplingSupport,

    #[error("basis Gram matrix is singular: components {components:?} are (nearly) colinear")]
    SingularGram { components: Vec<usize> },

    #[error("degenerate benchmark: optimal and myopic values coincide ({0})")]
    DegenerateBenchmark(f64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
