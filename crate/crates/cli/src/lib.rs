//! Command implementations behind the `ppt` binary. Every command writes only
//! under its output directory and finishes with a digest manifest.

pub mod commands;
pub mod config;
pub mod inspect;
pub mod run;

use std::fmt;

pub use config::RunConfig;

/// Failure classes; each maps to its own exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Inspect(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Inspect(_) => "inspect",
            CliError::Runtime(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Inspect(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Inspect(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ppt_core::Error> for CliError {
    fn from(e: ppt_core::Error) -> Self {
        match e {
            ppt_core::Error::InvalidInput(m) | ppt_core::Error::Plan(m) => CliError::Config(m),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
