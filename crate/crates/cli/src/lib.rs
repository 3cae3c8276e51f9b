//! Command line entry points and the JSON-over-HTTP session service.

pub mod commands;
pub mod config;
pub mod service;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A config document is malformed; `field` is the JSON path of the problem.
    #[error("{file}: {field}: {message}")]
    Config {
        file: PathBuf,
        field: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] hitl_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
