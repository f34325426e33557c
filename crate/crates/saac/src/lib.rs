//! Command-line front end: config files, run orchestration, CSV outputs
//! and network snapshots.

pub mod commands;
pub mod config;
pub mod io;
pub mod snapshot;

pub use config::{parse_config, ConfigError};
