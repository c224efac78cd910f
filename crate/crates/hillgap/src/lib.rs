//! Command-line front end, configuration and parallel sweeps for
//! [`hillgap_core`].

use std::path::PathBuf;

pub mod cli;
pub mod config;
pub mod exec;
pub mod output;
pub mod problem;
pub mod verify;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] hillgap_core::Error),

    #[error("config error{}: {message}", at.map(|(l, c)| format!(" at line {l}, column {c}")).unwrap_or_default())]
    Config { at: Option<(usize, usize)>, message: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Usage(String),

    #[error("serialization failed: {0}")]
    Serialize(String),

    #[error("{0}")]
    ChecksFailed(String),
}

impl AppError {
    /// 1 for bad input, 2 for numerical failure or failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Core(e) if e.is_precondition() => 1,
            AppError::Core(_) => 2,
            AppError::Config { .. } | AppError::Io { .. } | AppError::Usage(_) => 1,
            AppError::Serialize(_) | AppError::ChecksFailed(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
