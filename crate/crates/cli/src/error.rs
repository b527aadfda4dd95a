use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 1 config, 2 numerical or i/o, 3 validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) | CliError::Io { .. } => 2,
            CliError::Validation(_) => 3,
        }
    }

    /// Wraps a library error from config resolution, tagged with where it came from.
    pub fn config(tag: &'static str) -> impl Fn(driftbound::Error) -> CliError {
        move |e| CliError::Config(format!("{tag}: {e}"))
    }

    /// Wraps a library error from the compute phase.
    pub fn numerical(tag: &'static str) -> impl Fn(driftbound::Error) -> CliError {
        move |e| CliError::Numerical(format!("{tag}: {e}"))
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
