use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse { path: PathBuf, offset: u64, message: String },

    #[error("no background source: set analysis.background = \"no_ion\", pass --background, or give analysis.rates")]
    NoBackgroundSource,

    #[error(transparent)]
    Core(#[from] hbt_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Process exit status: 2 config, 3 I/O, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::NoBackgroundSource => 2,
            CliError::Io { .. } | CliError::Parse { .. } => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(_) => 2,
        }
    }
}
