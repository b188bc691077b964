//! Command-line driver for `compound-kge`: training, evaluation, relation
//! categorization and diagnostics.

pub mod args;
pub mod commands;
pub mod config;
mod error;

pub use args::Cli;
pub use commands::{run, TrainSummary};
pub use config::RunConfig;
pub use error::{CliError, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
