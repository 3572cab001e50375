//! Diffusion bridge between latent grids: closed-form bridge marginals and
//! scores, a sparse U-Net denoiser, reverse-SDE and probability-flow samplers,
//! and a rectified-flow baseline sharing the same network.

pub mod analytic;
pub mod denoiser;
pub mod normalize;
pub mod sampler;
pub mod schedule;
pub mod toy;
pub mod train;

use jga_core::CoreError;
use jga_nn::NnError;
use thiserror::Error;

pub use analytic::GaussianEndpoint;
pub use denoiser::{Denoiser, DenoiserField, DenoiserSpec, Objective, TimeSampling};
pub use normalize::Standardizer;
pub use sampler::{
    occupancy_binarize, sample_probability_flow_ode, sample_rectified_flow, sample_reverse_sde, SamplerConfig,
};
pub use schedule::{BridgeSchedule, DataStats, ScheduleKind};
pub use train::{bridge_loss, BridgeExample, BridgeTrainer};

/// A vector field over diffusion states: the score `U` for the bridge, the
/// velocity `v` for rectified flow.
pub trait Field {
    fn eval(&self, x: &[f64], y: &[f64], cond: &[f64], t: f64) -> Vec<f64>;
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("time {t} outside [0, {t_max}]")]
    Time { t: f64, t_max: f64 },
    #[error("score undefined at pinned endpoint t = {t}")]
    Endpoint { t: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at iteration {iteration} (t = {t})")]
    NonFinite { iteration: usize, loss: f64, t: f64 },
    #[error("sampler diverged at step {step} (t = {t}, |x| = {norm})")]
    Divergence { step: usize, t: f64, norm: f64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Core(#[from] CoreError),
}
