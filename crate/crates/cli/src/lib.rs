//! Experiment front end for the personalized federated CRNN simulator:
//! configuration files, corpus and checkpoint persistence, metrics output
//! and the `gen` / `train` / `eval` / `ablate` commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod metrics;

pub use config::{DataConfig, ExperimentConfig, Overrides};
pub use error::{CliError, Result};
