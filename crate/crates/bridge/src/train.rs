use jga_nn::{AdamConfig, ParameterStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::denoiser::{Denoiser, DenoiserSpec, Objective, TimeSampling};
use crate::schedule::BridgeSchedule;
use crate::{BridgeError, Field};

/// One training triple: start state `x0` (G_L with occupancy), endpoint `y`
/// (D_L) and condition (S_L), all interleaved states of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeExample {
    pub x0: Vec<f64>,
    pub y: Vec<f64>,
    pub cond: Vec<f64>,
}

/// Weighted score-matching loss `w(t)·mean‖U − score‖²` of any field.
pub fn bridge_loss(
    field: &impl Field,
    ex: &BridgeExample,
    schedule: &BridgeSchedule,
    t: f64,
    eps: &[f64],
) -> Result<f64, BridgeError> {
    let x_t = schedule.sample_bridge_with(&ex.x0, &ex.y, t, eps)?;
    let target = schedule.score(&x_t, &ex.x0, &ex.y, t)?;
    let u = field.eval(&x_t, &ex.y, &ex.cond, t);
    let sq: f64 = u.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(schedule.weight(t) * sq / u.len() as f64)
}

impl Denoiser {
    /// Samples `t` and noise per example, accumulates the batch-mean gradient
    /// and returns the batch-mean loss.
    pub fn train_step(
        &self,
        store: &mut ParameterStore,
        batch: &[BridgeExample],
        seed: u64,
        iteration: usize,
    ) -> Result<f64, BridgeError> {
        if batch.is_empty() {
            return Err(BridgeError::Config("empty training batch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = &self.schedule;
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for ex in batch {
            let t = match (self.objective, self.time_sampling) {
                (Objective::Bridge, TimeSampling::Uniform) => rng.gen_range(s.t_min..s.t_max - s.t_min),
                (Objective::Bridge, TimeSampling::Clock) => {
                    s.t_of_clock(rng.gen_range(s.clock(s.t_min)..s.clock(s.t_max - s.t_min)))
                }
                (Objective::RectifiedFlow, _) => rng.gen_range(0.0..1.0),
            };
            let eps: Vec<f64> = (0..ex.x0.len()).map(|_| rng.sample(StandardNormal)).collect();
            let loss = self.loss_and_grad(store, &ex.x0, &ex.y, &ex.cond, t, &eps, scale)?;
            if !loss.is_finite() {
                return Err(BridgeError::NonFinite { iteration, loss, t });
            }
            total += loss * scale;
        }
        Ok(total)
    }
}

/// Owns a denoiser, its parameters and optimizer state.
#[derive(Debug, Clone)]
pub struct BridgeTrainer {
    pub denoiser: Denoiser,
    pub store: ParameterStore,
    pub adam: AdamConfig,
    /// Gradients are rescaled to at most this global norm; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    pub iteration: usize,
}

impl BridgeTrainer {
    pub fn new(
        spec: DenoiserSpec,
        objective: Objective,
        schedule: BridgeSchedule,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<Self, BridgeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let denoiser = Denoiser::new(&mut store, "denoiser", spec, objective, schedule, &mut rng)?;
        Ok(Self {
            denoiser,
            store,
            adam,
            grad_clip: 1.0,
            seed,
            iteration: 0,
        })
    }

    /// One optimizer step with learning rate `lr`.
    pub fn step_with_lr(&mut self, batch: &[BridgeExample], lr: f64) -> Result<f64, BridgeError> {
        self.store.zero_grad();
        let seed = self.seed ^ (self.iteration as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let loss = self.denoiser.train_step(&mut self.store, batch, seed, self.iteration)?;
        if self.grad_clip > 0.0 {
            let n = self.store.grad_norm();
            if n > self.grad_clip {
                self.store.scale_grads(self.grad_clip / n);
            }
        }
        self.store.adam_step(&AdamConfig { lr, ..self.adam })?;
        self.iteration += 1;
        Ok(loss)
    }

    pub fn step(&mut self, batch: &[BridgeExample]) -> Result<f64, BridgeError> {
        self.step_with_lr(batch, self.adam.lr)
    }
}
