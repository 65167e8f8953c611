use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation or configuration.
    #[error("{0}")]
    Usage(String),
    /// Inputs that exist but cannot be used.
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] pinvhead::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Core(pinvhead::Error::Parameter { .. }) => 2,
            CliError::Core(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(path: &Path, detail: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {detail}", path.display()))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
