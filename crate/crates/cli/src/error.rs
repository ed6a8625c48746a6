use thiserror::Error;
use wfgame::GameError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Game(#[from] GameError),

    /// The run completed but a checked property failed.
    #[error("acceptance violation: {0}")]
    Violation(String),
}

impl CliError {
    /// Process exit status: 1 config/I-O, 2 acceptance violation, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::Json(_) | CliError::Csv(_) => 1,
            CliError::Violation(_) => 2,
            CliError::Game(e) => match e {
                GameError::InvalidInput(_)
                | GameError::SizeGuard(_)
                | GameError::Precondition(_)
                | GameError::Domain(_) => 1,
                GameError::Numeric(_) | GameError::InfeasibleWaterfill(_) | GameError::Sampling(_) => 3,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
