use std::fmt;
use std::path::PathBuf;

/// Malformed file content, located by byte offset.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("at byte {offset}: {detail}")]
pub struct FormatError {
    pub offset: usize,
    pub detail: String,
}

impl FormatError {
    pub fn new(offset: usize, detail: impl Into<String>) -> Self {
        Self { offset, detail: detail.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error(transparent)]
    Core(#[from] amdl_core::Error),
}

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    BadInput = 2,
    Io = 3,
    Numeric = 4,
}

impl AppError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        AppError::Usage(msg.to_string())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            AppError::Usage(_) => ExitCode::BadInput,
            AppError::Io { .. } | AppError::Format { .. } => ExitCode::Io,
            AppError::Core(e) => match e {
                amdl_core::Error::Diverged { .. } | amdl_core::Error::NonFinite { .. } => ExitCode::Numeric,
                _ => ExitCode::BadInput,
            },
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
