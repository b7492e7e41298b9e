use thiserror::Error;

use crate::config::ConfigError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STAGE: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("stage {stage}: backend failure: {message}")]
    Backend { stage: &'static str, message: String },
}

impl CliError {
    pub fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: e.to_string(),
        }
    }

    pub fn backend(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Backend {
            stage,
            message: e.to_string(),
        }
    }

    /// An I/O failure while writing or reading artifacts of `stage`.
    pub fn io(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self::stage(stage, e)
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Stage { .. } => EXIT_STAGE,
            CliError::Backend { .. } => EXIT_BACKEND,
        }
    }

    pub fn stage_name(&self) -> Option<&'static str> {
        match self {
            CliError::Stage { stage, .. } | CliError::Backend { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
