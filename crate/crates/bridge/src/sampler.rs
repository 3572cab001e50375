use jga_core::{Flagged, LatentGrid, Warning};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::schedule::{same_len, BridgeSchedule};
use crate::{BridgeError, Field};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Fraction of the leading steps that re-noise before stepping.
    pub churn_step_ratio: f64,
    /// Scalar multiplier on the learned score.
    pub guidance: f64,
    pub schedule: BridgeSchedule,
    pub seed: u64,
    /// A churn step re-noises from `t` to `t + churn_fraction·Δt`.
    pub churn_fraction: f64,
    /// Abort when the state norm exceeds this.
    pub max_norm: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 40,
            churn_step_ratio: 0.1,
            guidance: 1.0,
            schedule: BridgeSchedule::default(),
            seed: 0,
            churn_fraction: 0.5,
            max_norm: 1e6,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), BridgeError> {
        if self.steps == 0 {
            return Err(BridgeError::Config("steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.churn_step_ratio) {
            return Err(BridgeError::Config(format!(
                "churn_step_ratio must lie in [0, 1], got {}",
                self.churn_step_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.churn_fraction) {
            return Err(BridgeError::Config(format!(
                "churn_fraction must lie in [0, 1], got {}",
                self.churn_fraction
            )));
        }
        if !self.guidance.is_finite() || !(self.max_norm > 0.0) {
            return Err(BridgeError::Config(
                "guidance must be finite and max_norm positive".into(),
            ));
        }
        self.schedule.validate()
    }

    pub fn churn_steps(&self) -> usize {
        (self.churn_step_ratio * self.steps as f64).ceil() as usize
    }
}

fn guard(x: &[f64], cfg: &SamplerConfig, step: usize, t: f64) -> Result<(), BridgeError> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm > cfg.max_norm {
        return Err(BridgeError::Divergence { step, t, norm });
    }
    Ok(())
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> impl Iterator<Item = f64> + '_ {
    (0..n).map(|_| StandardNormal.sample(rng))
}

/// Euler–Maruyama integration of the reverse bridge SDE from `y` at
/// `T − t_min` down to `t_min`, with drift `−g²(guidance·U − h)`. Steps are
/// placed uniformly in the schedule's sampler clock and taken in the `σ²` clock,
/// where the diffusion coefficient is 1.
pub fn sample_reverse_sde(
    field: &impl Field,
    y: &[f64],
    cond: &[f64],
    cfg: &SamplerConfig,
) -> Result<Vec<f64>, BridgeError> {
    cfg.validate()?;
    same_len(y, cond)?;
    let s = &cfg.schedule;
    let grid = s.time_grid(cfg.steps);
    let churn = cfg.churn_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = y.to_vec();
    for i in 0..cfg.steps {
        let (mut t, next) = (grid[i], grid[i + 1]);
        if i < churn {
            let up = (t + cfg.churn_fraction * (t - next)).min(s.t_max - s.t_min);
            if up > t {
                let (mean, var) = s.forward_kernel(&x, t, up, y)?;
                let sd = var.sqrt();
                x = mean
                    .iter()
                    .zip(normals(&mut rng, mean.len()))
                    .map(|(m, z)| m + sd * z)
                    .collect();
                t = up;
            }
        }
        let ds = s.sigma2(t) - s.sigma2(next);
        let u = field.eval(&x, y, cond, t);
        let h = s.h_transform(&x, t, y)?;
        let sd = ds.sqrt();
        for (((xi, ui), hi), z) in x.iter_mut().zip(&u).zip(&h).zip(normals(&mut rng, y.len())) {
            *xi += (cfg.guidance * ui - hi) * ds + sd * z;
        }
        guard(&x, cfg, i, next)?;
    }
    Ok(x)
}

/// Heun integration, uniform in the sampler clock, of the probability-flow ODE
/// `dx/dt = −g²(½·guidance·U − h)`.
///
/// Every ODE solution leaves `y` at `T`, but only the one through the
/// conditional mean is regular there; the others grow like `√(σ_T² − σ_t²)`.
/// The state therefore starts at the denoised estimate `y + variance·U`
/// rather than at `y` itself.
pub fn sample_probability_flow_ode(
    field: &impl Field,
    y: &[f64],
    cond: &[f64],
    cfg: &SamplerConfig,
) -> Result<Vec<f64>, BridgeError> {
    cfg.validate()?;
    same_len(y, cond)?;
    let s = &cfg.schedule;
    let drift = |x: &[f64], t: f64| -> Result<Vec<f64>, BridgeError> {
        let u = field.eval(x, y, cond, t);
        let h = s.h_transform(x, t, y)?;
        let k = -s.g2(t) * s.dt_dclock(t);
        Ok(u.iter()
            .zip(&h)
            .map(|(u, h)| k * (0.5 * cfg.guidance * u - h))
            .collect())
    };
    let grid = s.time_grid(cfg.steps);
    let var = s.variance(grid[0]);
    let mut x: Vec<f64> = y
        .iter()
        .zip(field.eval(y, y, cond, grid[0]))
        .map(|(y, u)| y + var * cfg.guidance * u)
        .collect();
    for i in 0..cfg.steps {
        let (t, next) = (grid[i], grid[i + 1]);
        let dt = s.clock(next) - s.clock(t);
        let d1 = drift(&x, t)?;
        let pred: Vec<f64> = x.iter().zip(&d1).map(|(x, d)| x + dt * d).collect();
        let d2 = drift(&pred, next)?;
        for ((xi, a), b) in x.iter_mut().zip(&d1).zip(&d2) {
            *xi += 0.5 * dt * (a + b);
        }
        guard(&x, cfg, i, next)?;
    }
    Ok(x)
}

/// Euler integration of the rectified-flow ODE from `y` at `t = 1` to `t = 0`.
/// The field is the velocity `v ≈ x0 − y`.
pub fn sample_rectified_flow(
    field: &impl Field,
    y: &[f64],
    cond: &[f64],
    cfg: &SamplerConfig,
) -> Result<Vec<f64>, BridgeError> {
    cfg.validate()?;
    same_len(y, cond)?;
    let n = cfg.steps;
    let mut x = y.to_vec();
    for i in 0..n {
        let t = 1.0 - i as f64 / n as f64;
        let dt = t - (1.0 - (i + 1) as f64 / n as f64);
        let v = field.eval(&x, y, cond, t);
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += dt * vi;
        }
        guard(&x, cfg, i, t - dt)?;
    }
    Ok(x)
}

/// Thresholds the occupancy channel of an interleaved state at 0.5; inactive
/// cells get zero features. Flags an empty result.
pub fn occupancy_binarize(
    state: &[f64],
    resolution: usize,
    channels: usize,
) -> Result<Flagged<LatentGrid>, BridgeError> {
    let cells = resolution.pow(3);
    if state.len() != cells * (channels + 1) {
        return Err(BridgeError::Shape(format!(
            "state of length {} does not match r = {resolution}, F = {channels}",
            state.len()
        )));
    }
    let mut features = vec![0.0; cells * channels];
    let mut occupancy = vec![0.0; cells];
    for (cell, row) in state.chunks_exact(channels + 1).enumerate() {
        if row[channels] > 0.5 {
            occupancy[cell] = 1.0;
            features[cell * channels..(cell + 1) * channels].copy_from_slice(&row[..channels]);
        }
    }
    let any = occupancy.iter().any(|o| *o > 0.0);
    let grid = LatentGrid::new(resolution, channels, features, occupancy)?;
    Ok(if any {
        Flagged::ok(grid)
    } else {
        Flagged::warn(grid, Warning::EmptySelection)
    })
}
