use std::path::PathBuf;

use pc_anatomy_core::Error as CoreError;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_ESTIMATION: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Stage {
        context: String,
        #[source]
        source: CoreError,
        hint: Option<String>,
    },

    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn stage(context: impl Into<String>) -> impl FnOnce(CoreError) -> CliError {
        let context = context.into();
        move |source| CliError::Stage {
            context,
            source,
            hint: None,
        }
    }

    pub fn hint(&self) -> Option<&str> {
        match self {
            CliError::Stage { hint, .. } => hint.as_deref(),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Stage { source, .. } if source.is_data_error() => EXIT_DATA,
            CliError::Stage { .. } => EXIT_ESTIMATION,
            CliError::Config { .. } | CliError::Output { .. } => EXIT_DATA,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
