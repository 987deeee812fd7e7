//! File formats, configuration and subcommands of the `bdc-estim` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use commands::{cmd_dataset, cmd_eval, cmd_run, cmd_simulate, cmd_train};
pub use config::{ConfigError, RunConfig};
pub use error::CliError;
