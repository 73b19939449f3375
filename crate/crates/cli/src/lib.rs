//! Command-line front end and query service for `pacpriv-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;

pub use config::{ConfigArgs, GameConfig};
pub use error::{CliError, CliResult};

/// Environment variable naming the directory for audit logs and service
/// transcripts.
pub const LOG_DIR_ENV: &str = "PACPRIV_LOG_DIR";
