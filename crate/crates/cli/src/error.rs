use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),

    #[error(transparent)]
    Core(#[from] mixjump_core::Error),

    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    /// Process exit status: 2 for schema and I/O problems, 3 for numerical
    /// failures (verdict failures exit with 1).
    pub fn status(&self) -> i32 {
        match self {
            CliError::Core(_) => 3,
            _ => 2,
        }
    }
}
