//! File formats, manifests, configuration, and runnable pipelines for
//! latent diffusion-bridge purification experiments.
//!
//! The algorithmic core lives in `vocalbridge-core`; this crate adds
//! everything that touches a filesystem: the latent/embedding/checkpoint
//! formats, WAV io, TOML experiment configs, dataset generation, and the
//! gen/train/purify/eval/selfcheck pipelines behind the `vocalbridge`
//! binary.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod files;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod wav;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use report::MetricsReport;
