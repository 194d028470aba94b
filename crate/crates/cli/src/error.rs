use std::path::PathBuf;

use thiserror::Error;

/// Exit status for malformed configs, flags or input files.
pub const EXIT_VALIDATION: u8 = 1;
/// Exit status for cone exits, stiffness and other numerical breakdowns.
pub const EXIT_NUMERICAL: u8 = 2;
/// Exit status when `verify` finds a violated property.
pub const EXIT_SUITE: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// `path` names the offending key, `.` separated.
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] dhym::Error),

    #[error("{failed} of {total} checks failed")]
    Suite { failed: usize, total: usize },
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Suite { .. } => EXIT_SUITE,
            _ => EXIT_VALIDATION,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
