//! Experiment driver for the `gpattack` command-line tool.

pub mod config;
pub mod error;
pub mod manifest;
pub mod run;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
pub use run::{replay, run, Command};
