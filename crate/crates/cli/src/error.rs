use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] bea_core::Error),
    #[error("validation failed: {0}")]
    Validation(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Core(bea_core::Error::BlowUp { .. } | bea_core::Error::NonFinite(_)) => 2,
            CliError::Validation(_) => 3,
            _ => 1,
        })
    }
}
