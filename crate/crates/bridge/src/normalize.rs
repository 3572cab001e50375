use serde::{Deserialize, Serialize};

use crate::BridgeError;

/// Per-channel affine map of interleaved states to zero mean, unit variance.
/// Channels listed in `fixed` (such as occupancy) pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(channels: usize) -> Self {
        Self {
            shift: vec![0.0; channels],
            scale: vec![1.0; channels],
        }
    }

    pub fn fit(states: &[&[f64]], channels: usize, fixed: &[usize]) -> Result<Self, BridgeError> {
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut n = 0usize;
        for s in states {
            if s.len() % channels != 0 {
                return Err(BridgeError::Shape(format!(
                    "state length {} not a multiple of {channels}",
                    s.len()
                )));
            }
            for row in s.chunks_exact(channels) {
                for (c, v) in row.iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        let mut out = Self::identity(channels);
        if n == 0 {
            return Ok(out);
        }
        for c in (0..channels).filter(|c| !fixed.contains(c)) {
            let m = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - m * m).max(0.0);
            out.shift[c] = m;
            out.scale[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(out)
    }

    pub fn apply(&self, state: &[f64]) -> Vec<f64> {
        let c = self.shift.len();
        state
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.shift[i % c]) / self.scale[i % c])
            .collect()
    }

    pub fn invert(&self, state: &[f64]) -> Vec<f64> {
        let c = self.shift.len();
        state
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.scale[i % c] + self.shift[i % c])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_fixed_channels() {
        let a = [1.0, 0.0, 3.0, 1.0, 5.0, 0.5];
        let s = Standardizer::fit(&[&a], 2, &[1]).unwrap();
        assert_eq!(s.shift, vec![3.0, 0.0]);
        assert_eq!(s.scale[1], 1.0);
        let z = s.apply(&a);
        assert_eq!(z[1], 0.0);
        assert!((z[0] + z[2] + z[4]).abs() < 1e-12);
        for (u, v) in s.invert(&z).iter().zip(a) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
