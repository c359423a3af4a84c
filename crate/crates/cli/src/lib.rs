//! Experiment driver behind the `wncs-aoi` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod figures;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
pub use figures::FigureId;
