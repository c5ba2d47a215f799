//! Command-line front end: configuration, orchestration and CSV output.

pub mod config;
pub mod run;

pub use config::{emit_config, parse_config, Command, RunConfig};
pub use run::{config_hash, run, CliError};
