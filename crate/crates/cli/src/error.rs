use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sorl_core::Error),
}

impl CliError {
    /// 1 = configuration, 2 = numeric, 3 = I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(sorl_core::Error::Io { .. }) => 3,
            CliError::Core(e) if e.is_input() => 1,
            CliError::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
