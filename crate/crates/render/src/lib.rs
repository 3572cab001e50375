//! Software 3D Gaussian splatting.
//!
//! [`rasterize`] projects Gaussians with the EWA approximation and
//! alpha-composites them front to back; [`rasterize_backward`] returns exact
//! gradients of a pixel-space loss with respect to every Gaussian attribute.
//! The [`loss`] and [`ssim`] modules hold the image losses used for training
//! and evaluation.

pub mod loss;
mod raster;
pub mod ssim;

pub use loss::{l1, l1_grad, mse, psnr};
pub use raster::{
    project, rasterize, rasterize_backward, GaussianGrad, Projection, RenderConfig, Rendered, SplatFragment,
};
pub use ssim::{ssim, ssim_with_grad};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    Camera(#[from] jga_core::CoreError),
    #[error("image dimensions differ: {0}")]
    Dimensions(String),
    #[error("gradient image must be {expected}, got {got}")]
    GradientShape { expected: String, got: String },
}
