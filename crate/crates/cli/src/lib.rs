//! Command-line pipeline over `clonetts-core`: pretrain speaker encoders,
//! train the acoustic model, synthesize, evaluate and visualize.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
