use std::fmt;
use std::path::Path;

/// Errors surfaced by the runner and CLI.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Format(String),
    Core(symmetria_core::error::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid config: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Format(m) => write!(f, "format error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<symmetria_core::error::Error> for CliError {
    fn from(e: symmetria_core::error::Error) -> Self {
        CliError::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
