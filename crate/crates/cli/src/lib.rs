//! Batch front-end for `nde-core`: configuration files, presets and the
//! `check`, `solve`, `verify`, `sweep` and `mnc` commands.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use nde_core::error::Error as CoreError;
use thiserror::Error;

pub use config::{ConfigError, RunConfig};

pub mod exit {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const FAILED: u8 = 2;
    pub const NOT_CONVERGED: u8 = 3;
    pub const CONFIG: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", .path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {message}", .path.display())]
    Input { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Core(e) => match e {
                CoreError::InvalidSpec(_) => exit::CONFIG,
                CoreError::Hypothesis(_) | CoreError::PNotContractive { .. } | CoreError::FamilyMember { .. } => exit::FAILED,
                CoreError::NotConverged(_) | CoreError::Diverged(_) | CoreError::TailBudget { .. } => exit::NOT_CONVERGED,
                _ => exit::IO,
            },
            CliError::Io { .. } | CliError::Csv { .. } | CliError::Input { .. } => exit::IO,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
