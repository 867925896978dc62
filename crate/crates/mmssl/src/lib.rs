//! Experiment tooling around `mmssl-core`: JSON formats, training runs,
//! ablation grids and plots.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod log;
pub mod plot;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
