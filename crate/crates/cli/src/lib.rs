//! Command-line front end: CSV and JSON I/O, model files and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod model_file;
pub mod table;

pub use commands::{load_model, train_model, Cli, Trained};
pub use error::{CliError, CliResult};
pub use model_file::{FittedModel, ModelFile};
