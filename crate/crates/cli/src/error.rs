use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] fdtl::Error),
}

impl CliError {
    /// 3 for numerical failures, 2 for everything the user can fix.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(fdtl::Error::Numerical(_)) => 3,
            _ => 2,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
