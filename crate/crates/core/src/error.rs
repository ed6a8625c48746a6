use thiserror::Error;

/// Errors raised by the game solvers and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The power budget cannot be placed on any carrier with nonzero gain.
    #[error("infeasible waterfill: {0}")]
    InfeasibleWaterfill(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// NaN/inf in iterates, or an iterative routine that failed to settle.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Argument outside the domain of an approximation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("size guard: {0}")]
    SizeGuard(String),

    #[error("sampling failed: {0}")]
    Sampling(String),
}

pub type Result<T> = std::result::Result<T, GameError>;
