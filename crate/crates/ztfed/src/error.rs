use std::io;
use std::path::PathBuf;

/// Failures surfaced by the command line. Configuration and path problems
/// exit with status 2, everything else with 1.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Path { path: PathBuf, source: io::Error },
    #[error("{}: {reason}", path.display())]
    Input { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] ztfed_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Path { .. } | AppError::Input { .. } => 2,
            AppError::Core(ztfed_core::Error::InvalidConfig(_)) => 2,
            AppError::Core(_) | AppError::Runtime(_) => 1,
        }
    }

    pub(crate) fn path(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Path { path, source }
    }
}

pub type AppResult<T> = Result<T, AppError>;
