use clonetts_core::Error;

pub type CliResult<T> = Result<T, CliError>;

/// Failures, split by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(Error),
    #[error("{0}")]
    Missing(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) | CliError::Missing(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::NotPretrained(_)
            | Error::UnknownSpeaker(_)
            | Error::OutOfVocabulary { .. }
            | Error::InsufficientUtterances { .. }
            | Error::Manifest { .. }
            | Error::DurationMismatch { .. } => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}
