use std::process::ExitCode;

use macroplace_core::Error;

/// Command failure, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        })
    }

    fn classify(e: &Error, message: String) -> CliError {
        match e {
            Error::Numeric(_) => CliError::Numeric(message),
            Error::InvalidArgument(_) | Error::OutOfRange(_) => CliError::Usage(message),
            _ => CliError::Data(message),
        }
    }

    /// Wraps a core error that occurred while handling `context`.
    pub fn at(context: impl std::fmt::Display) -> impl FnOnce(Error) -> CliError {
        move |e| Self::classify(&e, format!("{context}: {e}"))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::classify(&e, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
