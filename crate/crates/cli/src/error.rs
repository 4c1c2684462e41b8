use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("compute error: {0}")]
    Compute(String),
    #[error("no run outputs found in {0}")]
    NoRunFound(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::NoRunFound(_) => 3,
            CliError::Compute(_) => 4,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{context}: {e}"))
}
