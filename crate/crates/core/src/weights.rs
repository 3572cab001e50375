use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Balancing weights of the VAE objective.
///
/// `render_l1`, `render_ssim` and `render_lpips` weight the terms of the
/// render loss; `kl`, `occupancy`, `attr` and `render` weight the four terms
/// of the total VAE loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub render_l1: f64,
    pub render_ssim: f64,
    pub render_lpips: f64,
    pub kl: f64,
    pub occupancy: f64,
    pub attr: f64,
    pub render: f64,
}

impl LossWeights {
    /// The published weights, λ1..λ7 = 0.8, 0.2, 0.1, 5e-7, 1, 1, 1.
    pub const fn published() -> Self {
        Self {
            render_l1: 0.8,
            render_ssim: 0.2,
            render_lpips: 0.1,
            kl: 5e-7,
            occupancy: 1.0,
            attr: 1.0,
            render: 1.0,
        }
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.render_l1,
            self.render_ssim,
            self.render_lpips,
            self.kl,
            self.occupancy,
            self.attr,
            self.render,
        ]
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for (i, w) in self.as_array().iter().enumerate() {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(CoreError::Invalid(format!("lambda{} must be >= 0, got {w}", i + 1)));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    /// Published weights with the LPIPS weight zeroed; no perceptual network ships.
    fn default() -> Self {
        Self {
            render_lpips: 0.0,
            ..Self::published()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_values() {
        assert_eq!(
            LossWeights::published().as_array(),
            [0.8, 0.2, 0.1, 5e-7, 1.0, 1.0, 1.0]
        );
        let d = LossWeights::default();
        assert_eq!(d.render_lpips, 0.0);
        assert_eq!(d.render_l1, 0.8);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            kl: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
