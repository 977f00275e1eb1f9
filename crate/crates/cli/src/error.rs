use thiserror::Error;

/// Failures mapped onto process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("hash mismatch: {0}")]
    Hash(String),
    #[error("{0}")]
    Pipeline(glimpse_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Hash(_) => 4,
            CliError::Pipeline(_) => 1,
        }
    }
}

impl From<glimpse_core::Error> for CliError {
    fn from(e: glimpse_core::Error) -> Self {
        use glimpse_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Io(err) => CliError::Io(err.to_string()),
            E::Format(m) => CliError::Io(m),
            E::Storage(m) => CliError::Io(m),
            other => CliError::Pipeline(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
