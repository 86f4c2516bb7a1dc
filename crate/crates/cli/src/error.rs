use std::io;

use suffx_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{0}")]
    Budget(String),
    #[error("{0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn input(path: &str, message: impl ToString) -> Self {
        CliError::Input {
            path: path.to_string(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input { .. } | CliError::Parse(_) | CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Budget(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            CoreError::Parse(_)
            | CoreError::InvalidCircuit { .. }
            | CoreError::InvalidTree { .. }
            | CoreError::RepeatedFeatureOnPath { .. }
            | CoreError::InvalidInstance(_)
            | CoreError::IncompleteInstance { .. }
            | CoreError::ZeroEvidenceInstance => CliError::Parse(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
