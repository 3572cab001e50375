use jga_core::Coord;
use jga_nn::{ParameterStore, SparseUNet, UNetCache, UNetGeometry, UNetSpec};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::schedule::BridgeSchedule;
use crate::{BridgeError, Field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Score matching against the bridge marginal.
    Bridge,
    /// Velocity regression on the straight interpolant.
    RectifiedFlow,
}

/// How bridge training draws `t`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    /// Uniform on `[t_min, T − t_min]`.
    Uniform,
    /// Uniform in the sampler clock, matching where the sampler spends steps.
    #[default]
    Clock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSpec {
    /// Latent grid side.
    pub resolution: usize,
    /// State channels per cell (latent features plus occupancy).
    pub channels: usize,
    pub width: usize,
    pub levels: usize,
    pub emb_dim: usize,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self {
            resolution: 8,
            channels: 5,
            width: 16,
            levels: 3,
            emb_dim: 32,
        }
    }
}

impl DenoiserSpec {
    pub fn state_len(&self) -> usize {
        self.resolution.pow(3) * self.channels
    }
}

/// U-Net over every cell of the latent grid. Input per cell is the
/// concatenation of state, endpoint and condition; time enters through a
/// sinusoidal embedding.
///
/// For the bridge the network is preconditioned: it sees `c_in·x_t` and its
/// output `r` gives the `x0` estimate `D = c_skip·x_t + c_out·r`, from which
/// the score follows in closed form.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub spec: DenoiserSpec,
    pub objective: Objective,
    pub schedule: BridgeSchedule,
    pub time_sampling: TimeSampling,
    net: SparseUNet,
    geo: UNetGeometry,
}

pub struct Pass {
    pub raw: Vec<f64>,
    cache: UNetCache,
}

impl Denoiser {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        spec: DenoiserSpec,
        objective: Objective,
        schedule: BridgeSchedule,
        rng: &mut impl Rng,
    ) -> Result<Self, BridgeError> {
        schedule.validate()?;
        if spec.resolution == 0 || spec.channels == 0 {
            return Err(BridgeError::Config(
                "denoiser needs positive resolution and channels".into(),
            ));
        }
        let max_levels = spec.resolution.trailing_zeros() as usize + 1;
        if spec.levels > max_levels {
            return Err(BridgeError::Config(format!(
                "{} levels exceed what a {}³ grid supports ({max_levels})",
                spec.levels, spec.resolution
            )));
        }
        let net = SparseUNet::new(
            store,
            name,
            UNetSpec {
                cin: 3 * spec.channels,
                cout: spec.channels,
                width: spec.width,
                levels: spec.levels,
                emb_dim: spec.emb_dim,
                zero_head: false,
            },
            rng,
        )?;
        let r = spec.resolution as i32;
        let mut coords: Vec<Coord> = Vec::with_capacity(spec.resolution.pow(3));
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    coords.push([i, j, k]);
                }
            }
        }
        let geo = UNetGeometry::new(&coords, spec.resolution, spec.levels);
        Ok(Self {
            spec,
            objective,
            schedule,
            time_sampling: TimeSampling::default(),
            net,
            geo,
        })
    }

    fn check(&self, parts: [&[f64]; 3]) -> Result<(), BridgeError> {
        let n = self.spec.state_len();
        if let Some(p) = parts.iter().find(|p| p.len() != n) {
            return Err(BridgeError::Shape(format!(
                "state of length {} where {n} is expected",
                p.len()
            )));
        }
        Ok(())
    }

    fn input(&self, x: &[f64], y: &[f64], cond: &[f64]) -> Vec<f64> {
        let c = self.spec.channels;
        let mut out = Vec::with_capacity(3 * x.len());
        for ((a, b), d) in x.chunks_exact(c).zip(y.chunks_exact(c)).zip(cond.chunks_exact(c)) {
            out.extend_from_slice(a);
            out.extend_from_slice(b);
            out.extend_from_slice(d);
        }
        out
    }

    pub fn forward(&self, store: &ParameterStore, x: &[f64], y: &[f64], cond: &[f64], t: f64) -> Pass {
        let (raw, cache) = self.net.forward(store, &self.geo, &self.input(x, y, cond), Some(t));
        Pass { raw, cache }
    }

    /// Accumulates parameter gradients for `d loss / d raw = g`.
    pub fn backward(&self, store: &mut ParameterStore, pass: &Pass, g: &[f64]) {
        self.net.backward(store, &self.geo, &pass.cache, g);
    }

    /// Score (bridge) or velocity (rectified flow) at `(x, t)`.
    pub fn predict(&self, store: &ParameterStore, x: &[f64], y: &[f64], cond: &[f64], t: f64) -> Vec<f64> {
        match self.objective {
            Objective::Bridge => {
                let p = self.schedule.preconditioning(t);
                let (a, b, c2) = self.schedule.coefficients(t);
                let raw = self.forward(store, &scaled(x, p.c_in), y, cond, t).raw;
                let c2 = c2.max(f64::MIN_POSITIVE);
                raw.iter()
                    .zip(x)
                    .zip(y)
                    .map(|((r, x), y)| (a * y + b * (p.c_skip * x + p.c_out * r) - x) / c2)
                    .collect()
            }
            Objective::RectifiedFlow => self.forward(store, x, y, cond, t).raw,
        }
    }

    /// Loss of one example at time `t` with noise `eps` (ignored for
    /// rectified flow); accumulates `scale`-weighted gradients.
    ///
    /// For the bridge the network regresses `(x0 − c_skip·x_t)/c_out`, which
    /// is the weighted score-matching loss under [`BridgeSchedule::weight`].
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad(
        &self,
        store: &mut ParameterStore,
        x0: &[f64],
        y: &[f64],
        cond: &[f64],
        t: f64,
        eps: &[f64],
        scale: f64,
    ) -> Result<f64, BridgeError> {
        self.check([x0, y, cond])?;
        let n = x0.len() as f64;
        let (input, target): (Vec<f64>, Vec<f64>) = match self.objective {
            Objective::Bridge => {
                let x_t = self.schedule.sample_bridge_with(x0, y, t, eps)?;
                let p = self.schedule.preconditioning(t);
                let target = x0.iter().zip(&x_t).map(|(a, x)| (a - p.c_skip * x) / p.c_out).collect();
                (scaled(&x_t, p.c_in), target)
            }
            Objective::RectifiedFlow => (
                x0.iter().zip(y).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
                x0.iter().zip(y).map(|(a, b)| a - b).collect(),
            ),
        };
        let pass = self.forward(store, &input, y, cond, t);
        let mut loss = 0.0;
        let g: Vec<f64> = pass
            .raw
            .iter()
            .zip(&target)
            .map(|(r, q)| {
                let d = r - q;
                loss += d * d;
                2.0 * d / n * scale
            })
            .collect();
        self.backward(store, &pass, &g);
        Ok(loss / n)
    }

    pub fn field<'a>(&'a self, store: &'a ParameterStore) -> DenoiserField<'a> {
        DenoiserField { net: self, store }
    }
}

/// A denoiser bound to its parameters.
#[derive(Clone, Copy)]
pub struct DenoiserField<'a> {
    pub net: &'a Denoiser,
    pub store: &'a ParameterStore,
}

impl Field for DenoiserField<'_> {
    fn eval(&self, x: &[f64], y: &[f64], cond: &[f64], t: f64) -> Vec<f64> {
        self.net.predict(self.store, x, y, cond, t)
    }
}

fn scaled(x: &[f64], k: f64) -> Vec<f64> {
    x.iter().map(|v| k * v).collect()
}
