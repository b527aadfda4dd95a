//! Experiments around the driftbound library: data synthesis, bound curves,
//! sample-size sweeps, simulation against the bound, and the acceptance suite.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod validation;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
