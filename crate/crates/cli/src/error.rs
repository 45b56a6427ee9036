use thiserror::Error;

/// Failure of a command, split by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 3,
        }
    }
}

impl From<ergoloop::Error> for CliError {
    fn from(e: ergoloop::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
