use std::path::Path;

use mtgp_core::Error as CoreError;

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: missing files, malformed CSV/JSON, inconsistent shapes.
    #[error("validation error: {0}")]
    Validation(String),
    /// Numerical or output failure after inputs were accepted.
    #[error("computation error: {0}")]
    Computation(String),
    #[error("{failed} of {total} verification checks failed")]
    CheckFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed { .. } => 1,
            CliError::Validation(_) => 2,
            CliError::Computation(_) => 3,
        }
    }

    pub fn read(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("cannot read {}: {err}", path.display()))
    }

    pub fn write(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Computation(format!("cannot write {}: {err}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InputShape(_)
            | CoreError::InvalidParameter(_)
            | CoreError::InvalidDataset(_)
            | CoreError::Domain { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Computation(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
