use jga_core::{voxel::layout, LossWeights};
use jga_nn::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::VaeError;

/// Architecture and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    /// Input grid side `R`; the latent grid has side `R / 8`.
    pub resolution: usize,
    pub latent_channels: usize,
    pub attr_channels: usize,
    /// Encoder widths at strides 2, 4 and 8.
    pub enc_widths: [usize; 3],
    /// Decoder widths at strides 8, 4, 2 and 1.
    pub dec_widths: [usize; 4],
    /// Run a residual block on the full-resolution candidates as well.
    pub final_stage_block: bool,
    pub weights: LossWeights,
    /// Iterations during which the attribute and render terms are off.
    pub warmup: usize,
    pub iterations: usize,
    /// Training views rendered per iteration for the render term.
    pub render_views: usize,
    pub adam: AdamConfig,
    /// The learning rate follows a cosine from `adam.lr` down to
    /// `adam.lr * final_lr_fraction` over `iterations`.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            latent_channels: 4,
            attr_channels: layout::BASE_CHANNELS,
            enc_widths: [16, 32, 32],
            dec_widths: [32, 32, 16, 16],
            final_stage_block: false,
            weights: LossWeights::default(),
            warmup: 100,
            iterations: 2000,
            render_views: 1,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            final_lr_fraction: 0.05,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn latent_resolution(&self) -> usize {
        self.resolution / 8
    }

    /// Learning rate at `iteration` under the cosine schedule.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let total = self.iterations.max(1) as f64;
        let p = (iteration as f64 / total).min(1.0);
        let lo = self.adam.lr * self.final_lr_fraction;
        lo + 0.5 * (self.adam.lr - lo) * (1.0 + (std::f64::consts::PI * p).cos())
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        if !jga_core::voxel::is_power_of_two(self.resolution) || self.resolution < 8 {
            return Err(VaeError::Config(format!(
                "resolution must be a power of two of at least 8, got {}",
                self.resolution
            )));
        }
        if self.latent_channels == 0 {
            return Err(VaeError::Config("latent_channels must be at least 1".into()));
        }
        if self.attr_channels < layout::BASE_CHANNELS {
            return Err(VaeError::Config(format!(
                "attr_channels must be at least {}, got {}",
                layout::BASE_CHANNELS,
                self.attr_channels
            )));
        }
        if self.enc_widths.iter().chain(&self.dec_widths).any(|w| *w == 0) {
            return Err(VaeError::Config("layer widths must be positive".into()));
        }
        self.weights.validate()?;
        Ok(())
    }
}
