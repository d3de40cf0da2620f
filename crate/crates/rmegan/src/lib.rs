//! File formats, dataset directories, checkpoints, experiment configuration
//! and the stages of the `rmegan` command-line pipeline, on top of
//! [`rmegan_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;

pub use rmegan_core as core;

pub use config::{EstimatorKind, ExperimentConfig};
pub use error::{Error, Result};
