//! Scalar two-cluster problem for checking that trained samplers reproduce
//! mixture proportions.

use jga_nn::AdamConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::denoiser::{DenoiserSpec, Objective};
use crate::schedule::{BridgeSchedule, DataStats};
use crate::train::{BridgeExample, BridgeTrainer};
use crate::BridgeError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoClusters {
    pub centers: [f64; 2],
    pub spread: f64,
    /// Probability of the second cluster.
    pub weight: f64,
    /// Standard deviation of the endpoint `y`, drawn independently of `x0`.
    pub endpoint_std: f64,
}

impl Default for TwoClusters {
    fn default() -> Self {
        Self {
            centers: [-1.0, 1.0],
            spread: 0.1,
            weight: 0.7,
            endpoint_std: 0.5,
        }
    }
}

impl TwoClusters {
    pub fn spec() -> DenoiserSpec {
        DenoiserSpec {
            resolution: 1,
            channels: 1,
            width: 32,
            levels: 1,
            emb_dim: 32,
        }
    }

    /// Exact second moments of the start and end states.
    pub fn data_stats(&self) -> DataStats {
        let [a, b] = self.centers;
        let s2 = self.spread * self.spread;
        DataStats {
            var_start: (1.0 - self.weight) * (a * a + s2) + self.weight * (b * b + s2),
            var_end: self.endpoint_std * self.endpoint_std,
            cov: 0.0,
        }
    }

    pub fn endpoint(&self, rng: &mut impl Rng) -> f64 {
        Normal::new(0.0, self.endpoint_std).expect("positive std").sample(rng)
    }

    pub fn draw(&self, rng: &mut impl Rng) -> BridgeExample {
        let c = self.centers[usize::from(rng.gen_bool(self.weight))];
        let x0 = Normal::new(c, self.spread).expect("positive spread").sample(rng);
        BridgeExample {
            x0: vec![x0],
            y: vec![self.endpoint(rng)],
            cond: vec![0.0],
        }
    }

    pub fn train(
        &self,
        objective: Objective,
        steps: usize,
        batch: usize,
        seed: u64,
    ) -> Result<BridgeTrainer, BridgeError> {
        let adam = AdamConfig {
            lr: 2e-3,
            ..AdamConfig::default()
        };
        let schedule = BridgeSchedule {
            data: self.data_stats(),
            ..BridgeSchedule::default()
        };
        let mut trainer = BridgeTrainer::new(Self::spec(), objective, schedule, adam, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..steps {
            let data: Vec<BridgeExample> = (0..batch).map(|_| self.draw(&mut rng)).collect();
            let lr = adam.lr * 0.5 * (1.0 + (std::f64::consts::PI * i as f64 / steps as f64).cos());
            trainer.step_with_lr(&data, lr)?;
        }
        Ok(trainer)
    }

    /// Fraction of samples closer to the second center.
    pub fn second_fraction(&self, samples: &[f64]) -> f64 {
        let mid = 0.5 * (self.centers[0] + self.centers[1]);
        samples.iter().filter(|x| **x > mid).count() as f64 / samples.len() as f64
    }
}
