use thiserror::Error;

/// Failure of a CLI command, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or inputs referenced by it (exit code 2).
    #[error("configuration error: {0}")]
    Config(String),
    /// Anything that goes wrong once work has started (exit code 1).
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}
