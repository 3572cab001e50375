use jga_bridge::BridgeSchedule;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

/// Euler–Maruyama simulation of the pinned forward SDE `dx = g²·h dt + g dW`
/// from `x0 = 0` towards `y = 1`, compared with the closed-form marginal.
#[test]
fn marginal_matches_pinned_sde_simulation() {
    let s = BridgeSchedule::default();
    let (paths, steps) = (100_000, 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = vec![1.0; paths];
    let mut x = vec![0.0; paths];
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let t = i as f64 * dt;
        let h = s.h_transform(&x, t, &y).unwrap();
        let g2 = s.g2(t);
        for (xi, hi) in x.iter_mut().zip(&h) {
            let z: f64 = rng.sample(StandardNormal);
            *xi += g2 * hi * dt + (g2 * dt).sqrt() * z;
        }
        let t_next = (i + 1) as f64 * dt;
        for probe in [0.1, 0.5, 0.9] {
            if (t_next - probe).abs() < 1e-9 {
                let (mean, var) = s.marginal(&[0.0], &[1.0], probe).unwrap();
                let (m, v) = moments(&x);
                let n = paths as f64;
                assert!(
                    (m - mean[0]).abs() < 3.0 * (var / n).sqrt(),
                    "t = {probe}: mean {m} vs {}",
                    mean[0]
                );
                assert!(
                    (v - var).abs() < 3.0 * var * (2.0 / n).sqrt(),
                    "t = {probe}: var {v} vs {var}"
                );
            }
        }
    }
    let (m, v) = moments(&x);
    assert!((m - 1.0).abs() < 1e-2 && v < 5e-3, "endpoint {m} ± {v}");
    assert_eq!(s.marginal(&[0.0], &[1.0], 0.0).unwrap().1, 0.0);
    assert_eq!(s.marginal(&[0.0], &[1.0], 1.0).unwrap().1, 0.0);
}

#[test]
fn sampled_bridge_moments_and_reproducibility() {
    let s = BridgeSchedule::default();
    let x0 = [0.5, -2.0];
    let y = [1.5, 1.0];
    let n = 20_000;
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|seed| s.sample_bridge(&x0, &y, 0.3, seed).unwrap())
        .collect();
    let (mean, var) = s.marginal(&x0, &y, 0.3).unwrap();
    for c in 0..2 {
        let (m, v) = moments(&draws.iter().map(|d| d[c]).collect::<Vec<_>>());
        assert!((m - mean[c]).abs() < 3.0 * (var / n as f64).sqrt());
        assert!((v - var).abs() < 3.0 * var * (2.0 / n as f64).sqrt());
    }
    assert_eq!(
        s.sample_bridge(&x0, &y, 0.3, 7).unwrap(),
        s.sample_bridge(&x0, &y, 0.3, 7).unwrap()
    );
    assert_eq!(s.sample_bridge(&x0, &y, 0.0, 7).unwrap(), x0.to_vec());
    assert_eq!(s.sample_bridge(&x0, &y, 1.0, 7).unwrap(), y.to_vec());
}

fn log_density(s: &BridgeSchedule, x: f64, x0: f64, y: f64, t: f64) -> f64 {
    let (m, v) = s.marginal(&[x0], &[y], t).unwrap();
    -(x - m[0]).powi(2) / (2.0 * v) - 0.5 * (2.0 * std::f64::consts::PI * v).ln()
}

/// Score against a central difference of the log marginal density.
#[test]
fn score_matches_finite_differences() {
    let s = BridgeSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let x0 = rng.gen_range(-3.0..3.0);
        let y = rng.gen_range(-3.0..3.0);
        let t = rng.gen_range(0.05..0.95);
        let (m, v) = s.marginal(&[x0], &[y], t).unwrap();
        let z: f64 = rng.sample(StandardNormal);
        let x = m[0] + v.sqrt() * z;
        let h = 1e-5 * v.sqrt();
        let fd = (log_density(&s, x + h, x0, y, t) - log_density(&s, x - h, x0, y, t)) / (2.0 * h);
        let score = s.score(&[x], &[x0], &[y], t).unwrap()[0];
        let err = (fd - score).abs() / score.abs().max(1e-3);
        assert!(err < 1e-4, "x0 {x0} y {y} t {t}: fd {fd} vs {score}");
    }
}

proptest! {
    #[test]
    fn endpoints_are_pinned(x0 in -10.0f64..10.0, y in -10.0f64..10.0) {
        let s = BridgeSchedule::default();
        prop_assert_eq!(s.marginal(&[x0], &[y], 0.0).unwrap(), (vec![x0], 0.0));
        prop_assert_eq!(s.marginal(&[x0], &[y], 1.0).unwrap(), (vec![y], 0.0));
    }

    #[test]
    fn score_vanishes_at_the_mean(x0 in -10.0f64..10.0, y in -10.0f64..10.0, t in 0.01f64..0.99) {
        let s = BridgeSchedule::default();
        let (m, v) = s.marginal(&[x0], &[y], t).unwrap();
        prop_assert!(v > 0.0);
        prop_assert_eq!(s.score(&m, &[x0], &[y], t).unwrap()[0], 0.0);
        prop_assert_eq!(s.h_transform(&[y], t, &[y]).unwrap()[0], 0.0);
    }

    #[test]
    fn grid_is_monotone(n in 1usize..200) {
        let g = BridgeSchedule::default().time_grid(n);
        prop_assert_eq!(g.len(), n + 1);
        prop_assert!(g.windows(2).all(|w| w[1] < w[0]));
    }
}
