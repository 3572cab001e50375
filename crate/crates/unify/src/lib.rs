//! Modality unification: a depth map and a body mesh become Gaussian sets in
//! the same voxelized representation as the ground truth.

pub mod assoc;
pub mod net;
pub mod project;

use jga_core::CoreError;
use jga_nn::NnError;
use thiserror::Error;

pub use assoc::{associate_indices, associate_nn, targets_for};
pub use net::{depth_input, smpl_input, UnifyKind, UnifyNet};
pub use project::{backproject_depth, color_smpl_by_projection, default_tolerance, ColoredCloud};

#[derive(Debug, Error)]
pub enum UnifyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("the ground-truth Gaussian set is empty")]
    EmptyGroundTruth,
    #[error("the input has no points")]
    EmptyInput,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Core(#[from] CoreError),
}
