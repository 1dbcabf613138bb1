use thiserror::Error;

/// Errors raised anywhere in the steady-state and simulation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("mechanical instability: {0}")]
    Stability(String),

    #[error("system is not controllable: {0}")]
    Controllability(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("sweep failed: every cell errored, first cause: {0}")]
    Sweep(Box<Error>),
}

impl Error {
    /// Short machine-readable tag, used as the per-cell status in sweep output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Input(_) => "input",
            Error::Stability(_) => "stability",
            Error::Controllability(_) => "controllability",
            Error::Solver(_) => "solver",
            Error::Convergence { .. } => "convergence",
            Error::Internal(_) => "internal",
            Error::Sweep(_) => "sweep",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
