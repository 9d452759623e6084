use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error{}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default(), field.as_ref().map(|f| format!(" in field `{f}`")).unwrap_or_default())]
    Parse { line: Option<usize>, field: Option<String>, message: String },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid parameter `{field}`: {message}")]
    InvalidParams { field: String, message: String },

    #[error(transparent)]
    Model(#[from] mvpp_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Parse { line: None, field: Some(field.into()), message: message.into() }
    }

    pub fn param(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::InvalidParams { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for anything wrong with the model or its
    /// configuration, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => EXIT_IO,
            _ => EXIT_MODEL,
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_MODEL: i32 = 2;
pub const EXIT_TOLERANCE: i32 = 3;
pub const EXIT_IO: i32 = 4;
