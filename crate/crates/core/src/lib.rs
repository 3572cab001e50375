//! Domain types shared across the reconstruction pipeline.
//!
//! Gaussian sets, sparse voxel tensors, dense latent grids, cameras, images
//! and meshes live here together with the conversions between free-form
//! Gaussian sets and their voxelized form.

pub mod camera;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod latent;
pub mod mesh;
pub mod spatial;
pub mod voxel;
pub mod weights;

pub use camera::Camera;
pub use error::{CoreError, Flagged, Warning};
pub use gaussian::{Cube, GaussianAttributes, GaussianSet};
pub use image::{DepthMap, Image};
pub use latent::LatentGrid;
pub use mesh::SmplMesh;
pub use spatial::KdTree;
pub use voxel::{densify, devoxelize, sparsify, voxelize, voxelize_with_channels, Coord, SparseVoxelTensor};
pub use weights::LossWeights;

/// Numerically safe logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`], clamped away from the endpoints.
#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}
