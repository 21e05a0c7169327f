//! Experiment driver for the swaption deep-hedging laboratory.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use manifest::RunManifest;
pub use pipeline::Workspace;
