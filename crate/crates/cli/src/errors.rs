//! Top-level command errors, split by exit code.

use thiserror::Error;

use crate::formats::FormatError;

/// Exit code for configuration problems.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for runtime and numeric failures.
pub const EXIT_RUNTIME: i32 = 3;

/// Anything a command can fail with. `Config` covers the run document and
/// the inputs it references (caught before any output is written); `Runtime`
/// covers everything after validation passes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime(message.into())
    }
}

impl From<FormatError> for CliError {
    fn from(err: FormatError) -> Self {
        CliError::Runtime(err.to_string())
    }
}
