use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("missing artifact {}: {what}", path.display())]
    Missing { path: PathBuf, what: String },
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Core(gelsim::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Missing { .. } => 4,
            CliError::Training(_) => 5,
            CliError::Core(_) => 1,
        }
    }

    pub fn missing(path: impl Into<PathBuf>, what: &str) -> Self {
        CliError::Missing {
            path: path.into(),
            what: what.to_string(),
        }
    }
}

impl From<gelsim::Error> for CliError {
    fn from(e: gelsim::Error) -> Self {
        match e {
            gelsim::Error::Budget { .. } => CliError::Budget(e.to_string()),
            gelsim::Error::Diverged { .. } => CliError::Training(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(gelsim::Error::from(e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
