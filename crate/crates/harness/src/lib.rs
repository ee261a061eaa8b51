//! Experiment driver: sampling, recovery, evaluation, blur-radius sweeps,
//! training and trade-off reports over synthetic scenes.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod sampler;
pub mod train;

pub use config::{ExperimentConfig, SamplerKind};
pub use error::{HarnessError, Result};
