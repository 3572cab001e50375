//! Minimal neural-network engine.
//!
//! Every layer has a hand-written backward pass; there is no autodiff tape.
//! Features are row-major `[rows, channels]` matrices, where rows are the
//! active voxels of a sparse tensor (or all cells of a dense grid). Parameters
//! live in a flat [`ParameterStore`] with paired gradients and Adam moments.

pub mod checkpoint;
pub mod dense;
pub mod gemm;
pub mod layers;
pub mod sparse;
pub mod store;
pub mod tensor;
pub mod unet;

pub use dense::{dense_conv3d_bwd, dense_conv3d_fwd};
pub use layers::{silu, silu_backward, time_embedding, Conv, GroupNorm, Linear, NormCache, ResBlock, ResCache};
pub use sparse::{
    gen_sparse_transpose_conv3d_fwd, prune, prune_backward, select_rows, sparse_conv3d_fwd, KernelMap, Pruned,
};
pub use store::{AdamConfig, ParamId, ParameterStore};
pub use tensor::DenseTensor;
pub use unet::{SparseUNet, UNetCache, UNetGeometry, UNetSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parameter `{0}` already exists")]
    DuplicateParameter(String),
    #[error("non-finite gradient in parameter `{name}` at element {index}")]
    NonFiniteGradient { name: String, index: usize },
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] jga_core::CoreError),
    #[error(transparent)]
    Io(#[from] jga_io::IoError),
}
