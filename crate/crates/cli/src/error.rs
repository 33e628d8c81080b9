use std::fmt;
use std::path::Path;

use adar_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numeric,
    Format,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Format,
            message: message.into(),
        }
    }

    pub fn other(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Other,
            message: message.into(),
        }
    }

    /// 0 is success; 2 config, 3 numerical abort, 4 format, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Numeric => 3,
            ErrorKind::Format => 4,
            ErrorKind::Other => 1,
        }
    }

    pub fn in_file(self, path: &Path) -> Self {
        self.context(&path.display().to_string())
    }

    pub fn context(mut self, prefix: &str) -> Self {
        self.message = format!("{prefix}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::InvalidArgument(_)
            | Error::InvalidDimension(_)
            | Error::TimestepOutOfRange { .. } => ErrorKind::Config,
            Error::NonFinite { .. } => ErrorKind::Numeric,
            Error::Parse { .. }
            | Error::EmptyDataset
            | Error::Format(_)
            | Error::Version { .. }
            | Error::Truncated(_) => ErrorKind::Format,
            _ => ErrorKind::Other,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::other(e.to_string())
    }
}

/// Attaches a file path to errors from reading or parsing it.
pub trait PathContext<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<CliError>> PathContext<T> for std::result::Result<T, E> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| e.into().in_file(path))
    }
}
