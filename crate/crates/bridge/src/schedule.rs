use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::BridgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Variance exploding: σ(t) = t, zero drift.
    Ve,
}

/// Noise schedule of the bridge. For the VE kind `σ(t) = t` and
/// `g(t)² = dσ²/dt = 2t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSchedule {
    pub kind: ScheduleKind,
    pub t_max: f64,
    pub t_min: f64,
    /// Sampler steps are uniform in `τ^(1/rho)`; larger values concentrate
    /// steps near `t = 0`.
    pub rho: f64,
    /// Second moments of the endpoints, used to precondition the denoiser.
    pub data: DataStats,
}

/// Variances of the start and end states and their covariance, per entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataStats {
    pub var_start: f64,
    pub var_end: f64,
    pub cov: f64,
}

impl DataStats {
    /// Uncentered second moments over paired start and end states.
    pub fn estimate<'a>(pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> Self {
        let (mut n, mut s0, mut s1, mut c) = (0usize, 0.0, 0.0, 0.0);
        for (x0, y) in pairs {
            for (a, b) in x0.iter().zip(y) {
                n += 1;
                s0 += a * a;
                s1 += b * b;
                c += a * b;
            }
        }
        if n == 0 {
            return Self::default();
        }
        let n = n as f64;
        Self {
            var_start: s0 / n,
            var_end: s1 / n,
            cov: c / n,
        }
    }
}

impl Default for DataStats {
    fn default() -> Self {
        Self {
            var_start: 1.0,
            var_end: 1.0,
            cov: 0.5,
        }
    }
}

/// Scalings of a denoiser `D = c_skip·x_t + c_out·F(c_in·x_t, …)` that
/// estimates `x0` from `x_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub c_in: f64,
    pub c_skip: f64,
    pub c_out: f64,
}

impl Default for BridgeSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Ve,
            t_max: 1.0,
            t_min: 1e-4,
            rho: 3.0,
            data: DataStats::default(),
        }
    }
}

impl BridgeSchedule {
    pub fn validate(&self) -> Result<(), BridgeError> {
        if !(self.rho >= 1.0) {
            return Err(BridgeError::Config(format!("rho must be at least 1, got {}", self.rho)));
        }
        if !(self.t_max > 0.0 && self.t_min > 0.0 && self.t_min < 0.5 * self.t_max) {
            return Err(BridgeError::Config(format!(
                "schedule needs 0 < t_min < t_max / 2, got t_min = {}, t_max = {}",
                self.t_min, self.t_max
            )));
        }
        let d = self.data;
        if !(d.var_start > 0.0 && d.var_end > 0.0 && d.cov * d.cov < d.var_start * d.var_end) {
            return Err(BridgeError::Config(format!(
                "data statistics need positive variances and |cov| below their geometric mean, got {d:?}"
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Ve => t,
        }
    }

    pub fn sigma2(&self, t: f64) -> f64 {
        let s = self.sigma(t);
        s * s
    }

    /// Squared diffusion coefficient `dσ²/dt`.
    pub fn g2(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Ve => 2.0 * t,
        }
    }

    fn check(&self, t: f64) -> Result<(), BridgeError> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(BridgeError::Time { t, t_max: self.t_max });
        }
        Ok(())
    }

    /// Bridge variance `σ_t²(σ_T² − σ_t²)/σ_T²`; exactly zero at both ends.
    pub fn variance(&self, t: f64) -> f64 {
        let (st, s_end) = (self.sigma2(t), self.sigma2(self.t_max));
        st * (s_end - st) / s_end
    }

    /// Coefficients of `x_t = a·y + b·x0 + c·ε`, returned as `(a, b, c²)`.
    pub fn coefficients(&self, t: f64) -> (f64, f64, f64) {
        let a = self.sigma2(t) / self.sigma2(self.t_max);
        (a, 1.0 - a, self.variance(t))
    }

    /// Scalings that give the denoiser's input and regression target unit
    /// variance under the endpoint statistics.
    pub fn preconditioning(&self, t: f64) -> Preconditioning {
        let (a, b, c2) = self.coefficients(t);
        let DataStats {
            var_start,
            var_end,
            cov,
        } = self.data;
        let total = a * a * var_end + b * b * var_start + 2.0 * a * b * cov + c2;
        let c_in = total.sqrt().recip();
        Preconditioning {
            c_in,
            c_skip: (b * var_start + a * cov) / total,
            c_out: (a * a * (var_start * var_end - cov * cov) + var_start * c2).sqrt() * c_in,
        }
    }

    /// Training weight `w(t) = c²·c²/(b²·c_out²)`, under which the weighted
    /// score error equals the squared error of the preconditioned network
    /// output.
    pub fn weight(&self, t: f64) -> f64 {
        let (_, b, c2) = self.coefficients(t);
        let c_out = self.preconditioning(t).c_out;
        (c2 / (b * c_out)).powi(2)
    }

    /// Mean and (per-channel) variance of `x_t` given both endpoints.
    pub fn marginal(&self, x0: &[f64], y: &[f64], t: f64) -> Result<(Vec<f64>, f64), BridgeError> {
        self.check(t)?;
        same_len(x0, y)?;
        let a = self.sigma2(t) / self.sigma2(self.t_max);
        let mean = x0.iter().zip(y).map(|(x, y)| a * y + (1.0 - a) * x).collect();
        Ok((mean, self.variance(t)))
    }

    pub fn sample_bridge(&self, x0: &[f64], y: &[f64], t: f64, seed: u64) -> Result<Vec<f64>, BridgeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<f64> = (0..x0.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        self.sample_bridge_with(x0, y, t, &eps)
    }

    /// `mean + √variance · eps`.
    pub fn sample_bridge_with(&self, x0: &[f64], y: &[f64], t: f64, eps: &[f64]) -> Result<Vec<f64>, BridgeError> {
        let (mut mean, var) = self.marginal(x0, y, t)?;
        same_len(x0, eps)?;
        let s = var.sqrt();
        for (m, e) in mean.iter_mut().zip(eps) {
            *m += s * e;
        }
        Ok(mean)
    }

    /// Exact score of the bridge marginal, `(mean − x_t)/variance`.
    pub fn score(&self, x_t: &[f64], x0: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>, BridgeError> {
        let (mean, var) = self.marginal(x0, y, t)?;
        same_len(x_t, x0)?;
        if var <= 0.0 {
            return Err(BridgeError::Endpoint { t });
        }
        Ok(mean.iter().zip(x_t).map(|(m, x)| (m - x) / var).collect())
    }

    /// Doob h-transform drift term `(y − x)/(σ_T² − σ_t²)`.
    pub fn h_transform(&self, x: &[f64], t: f64, y: &[f64]) -> Result<Vec<f64>, BridgeError> {
        self.check(t)?;
        same_len(x, y)?;
        let d = self.sigma2(self.t_max) - self.sigma2(t);
        if d <= 0.0 {
            return Err(BridgeError::Endpoint { t });
        }
        Ok(x.iter().zip(y).map(|(x, y)| (y - x) / d).collect())
    }

    /// Forward bridge kernel: law of `x_{t2}` given `x_t = x` and `x_T = y`,
    /// for `t ≤ t2 ≤ T`. Returns mean and per-channel variance.
    pub fn forward_kernel(&self, x: &[f64], t: f64, t2: f64, y: &[f64]) -> Result<(Vec<f64>, f64), BridgeError> {
        self.check(t)?;
        self.check(t2)?;
        same_len(x, y)?;
        let (s1, s2, s_end) = (self.sigma2(t), self.sigma2(t2), self.sigma2(self.t_max));
        if s2 < s1 || s_end <= s1 {
            return Err(BridgeError::Config(format!(
                "kernel needs t ≤ t2 < T, got t = {t}, t2 = {t2}"
            )));
        }
        let a = (s2 - s1) / (s_end - s1);
        let mean = x.iter().zip(y).map(|(x, y)| x + a * (y - x)).collect();
        Ok((mean, (s2 - s1) * (s_end - s2) / (s_end - s1)))
    }

    /// Sampler clock `τ = −½·ln(1 − σ_t²/σ_T²)`. In `τ` the
    /// `1/(σ_T² − σ_t²)` stiffness of the bridge drift near `T` becomes a
    /// bounded rate, and the drift stays smooth in `σ_t²` near 0.
    pub fn tau(&self, t: f64) -> f64 {
        -0.5 * (-(self.sigma2(t) / self.sigma2(self.t_max))).ln_1p()
    }

    pub fn t_of_tau(&self, tau: f64) -> f64 {
        match self.kind {
            ScheduleKind::Ve => self.t_max * (-(-2.0 * tau).exp_m1()).sqrt(),
        }
    }

    /// `dt/dτ`.
    pub fn dt_dtau(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Ve => (self.sigma2(self.t_max) - self.sigma2(t)) / t,
        }
    }

    /// Sampler clock `w = τ^(1/rho)`.
    pub fn clock(&self, t: f64) -> f64 {
        self.tau(t).powf(1.0 / self.rho)
    }

    pub fn t_of_clock(&self, w: f64) -> f64 {
        self.t_of_tau(w.powf(self.rho))
    }

    /// `dt/dw`.
    pub fn dt_dclock(&self, t: f64) -> f64 {
        self.dt_dtau(t) * self.rho * self.tau(t).powf((self.rho - 1.0) / self.rho)
    }

    /// `n + 1` decreasing times from `T − t_min` to `t_min`, uniform in the
    /// sampler clock.
    pub fn time_grid(&self, n: usize) -> Vec<f64> {
        let hi = self.t_max - self.t_min;
        let lo = self.t_min;
        let (a, b) = (self.clock(hi), self.clock(lo));
        let mut out: Vec<f64> = (0..=n)
            .map(|i| self.t_of_clock(a + (b - a) * i as f64 / n.max(1) as f64))
            .collect();
        out[0] = hi;
        out[n] = lo;
        out
    }
}

pub(crate) fn same_len(a: &[f64], b: &[f64]) -> Result<(), BridgeError> {
    if a.len() != b.len() {
        return Err(BridgeError::Shape(format!(
            "lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let s = BridgeSchedule::default();
        let (m, v) = s.marginal(&[0.0], &[1.0], 0.5).unwrap();
        assert_eq!((m[0], v), (0.25, 0.1875));
        assert_eq!(s.score(&[0.0], &[0.0], &[1.0], 0.5).unwrap()[0], 0.25 / 0.1875);
        assert_eq!(s.marginal(&[0.3], &[1.7], 0.0).unwrap(), (vec![0.3], 0.0));
        assert_eq!(s.marginal(&[0.3], &[1.7], 1.0).unwrap(), (vec![1.7], 0.0));
        assert_eq!(s.h_transform(&[0.25], 0.0, &[2.0]).unwrap()[0], 1.75);
        assert_eq!(s.h_transform(&[2.0], 0.4, &[2.0]).unwrap()[0], 0.0);
        assert!(matches!(s.marginal(&[0.0], &[0.0], 1.5), Err(BridgeError::Time { .. })));
        assert!(matches!(
            s.score(&[0.0], &[0.0], &[1.0], 0.0),
            Err(BridgeError::Endpoint { .. })
        ));
        assert!(matches!(
            s.score(&[0.0], &[0.0], &[1.0], 1.0),
            Err(BridgeError::Endpoint { .. })
        ));
        assert!(matches!(
            s.h_transform(&[0.0], 1.0, &[1.0]),
            Err(BridgeError::Endpoint { .. })
        ));
    }

    #[test]
    fn grid_is_decreasing_with_exact_ends() {
        let s = BridgeSchedule::default();
        for t in [1e-4, 0.3, 0.9999] {
            assert!((s.t_of_tau(s.tau(t)) - t).abs() < 1e-12);
            let d = 1e-7;
            let fd = 2.0 * d / (s.tau(t + d) - s.tau(t - d));
            assert!((fd - s.dt_dtau(t)).abs() < 1e-5 * fd);
            assert!((s.t_of_clock(s.clock(t)) - t).abs() < 1e-12);
            let fd = 2.0 * d / (s.clock(t + d) - s.clock(t - d));
            assert!((fd - s.dt_dclock(t)).abs() < 1e-5 * fd);
        }
        let g = s.time_grid(40);
        assert_eq!(g.len(), 41);
        assert_eq!((g[0], g[40]), (1.0 - 1e-4, 1e-4));
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }
}
