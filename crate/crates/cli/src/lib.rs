//! Stage-by-stage driver for the reconstruction pipeline. Every stage is a
//! function over an output directory, so the binary, the end-to-end tests
//! and `run-all` share one implementation.

pub mod config;
pub mod stages;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{config_hash, Overrides, PipelineConfig, StepsTarget};
pub use stages::{evaluate, run_all, run_stage, scene_names, Manifest, Stage, VaeReport};

/// An upstream artifact is absent.
#[derive(Debug, Error)]
#[error("missing {}; run `jga {producer}` first", path.display())]
pub struct MissingArtifact {
    pub path: PathBuf,
    pub producer: &'static str,
}
