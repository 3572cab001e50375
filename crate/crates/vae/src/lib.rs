//! Sparse variational autoencoder for voxelized Gaussian scenes.
//!
//! The encoder downsamples a sparse attribute tensor three times by 2 and
//! predicts a diagonal Gaussian per surviving latent cell. The decoder grows
//! coordinates back with generative transposed convolutions, pruning
//! candidates by predicted occupancy after each stage, and predicts the
//! attribute channels of the final voxels.

pub mod config;
pub mod loss;
pub mod model;
pub mod refine;
pub mod train;

pub use config::VaeConfig;
pub use loss::{
    attr_loss, kl_loss, occupancy_loss, render_loss, reparameterize, total_loss, LatentDistribution, LossTerms,
    RenderView,
};
pub use model::{Decoded, PruneMode, StageOutput, Vae};
pub use refine::Refiner;
pub use train::{iou, TrainScene, VaeTrainer};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("nothing to encode: the input tensor has no active voxels")]
    EmptyInput,
    #[error("latent grid has no cell with occupancy above 0.5; the sampled latent is degenerate")]
    EmptyLatent,
    #[error("render loss needs at least one view")]
    NoViews,
    #[error("non-finite loss at iteration {iteration}: {terms}")]
    NonFinite { iteration: usize, terms: String },
    #[error(transparent)]
    Nn(#[from] jga_nn::NnError),
    #[error(transparent)]
    Core(#[from] jga_core::CoreError),
    #[error(transparent)]
    Render(#[from] jga_render::RenderError),
}
