use crate::schedule::BridgeSchedule;
use crate::Field;

/// Exact bridge score `∇ log q(x_t | y)` when every start value is drawn
/// independently from `N(mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianEndpoint {
    pub mean: f64,
    pub var: f64,
    pub schedule: BridgeSchedule,
}

impl GaussianEndpoint {
    /// Mean and variance of `x_t` given `y`.
    pub fn marginal(&self, y: f64, t: f64) -> (f64, f64) {
        let s = &self.schedule;
        let a = s.sigma2(t) / s.sigma2(s.t_max);
        (
            a * y + (1.0 - a) * self.mean,
            (1.0 - a) * (1.0 - a) * self.var + s.variance(t),
        )
    }
}

impl Field for GaussianEndpoint {
    fn eval(&self, x: &[f64], y: &[f64], _cond: &[f64], t: f64) -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(x, y)| {
                let (m, v) = self.marginal(*y, t);
                (m - x) / v
            })
            .collect()
    }
}
