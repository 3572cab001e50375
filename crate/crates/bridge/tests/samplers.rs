use jga_bridge::*;
use jga_core::Warning;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn stub(var: f64) -> GaussianEndpoint {
    GaussianEndpoint {
        mean: 0.7,
        var,
        schedule: BridgeSchedule::default(),
    }
}

fn sde_population(field: &GaussianEndpoint, y: f64, cfg: SamplerConfig, runs: u64) -> (f64, f64) {
    let xs: Vec<f64> = (0..runs)
        .map(|seed| sample_reverse_sde(field, &[y], &[0.0], &SamplerConfig { seed, ..cfg }).unwrap()[0])
        .collect();
    let n = runs as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

/// With the exact score for `x0 ~ N(0.7, 0.25)` the reverse SDE recovers the
/// start distribution.
#[test]
fn sde_recovers_gaussian_start() {
    let f = stub(0.25);
    let n = 10_000;
    let cfg = SamplerConfig {
        steps: 1000,
        ..SamplerConfig::default()
    };
    let (m, v) = sde_population(&f, -0.5, cfg, n);
    let se_m = (0.25 / n as f64).sqrt();
    let se_v = 0.25 * (2.0 / n as f64).sqrt();
    assert!((m - 0.7).abs() < 3.0 * se_m, "mean {m}");
    assert!((v - 0.25).abs() < 3.0 * se_v, "var {v}");
}

/// Variance error roughly halves when the step count doubles.
#[test]
fn sde_weak_order_one() {
    let f = stub(0.25);
    let cfg = SamplerConfig::default();
    let err: Vec<f64> = [5, 10, 20]
        .iter()
        .map(|&steps| (sde_population(&f, -0.5, SamplerConfig { steps, ..cfg }, 10_000).1 - 0.25).abs())
        .collect();
    assert!(err[1] < 0.7 * err[0] && err[2] < 0.7 * err[1], "{err:?}");
}

fn ode_errors(rho: f64, steps: &[usize]) -> Vec<f64> {
    let schedule = BridgeSchedule {
        rho,
        ..BridgeSchedule::default()
    };
    let f = GaussianEndpoint { schedule, ..stub(0.25) };
    let run = |steps| {
        sample_probability_flow_ode(
            &f,
            &[-0.5],
            &[0.0],
            &SamplerConfig {
                steps,
                schedule,
                ..SamplerConfig::default()
            },
        )
        .unwrap()[0]
    };
    let (target, _) = f.marginal(-0.5, 1e-4);
    let reference = run(20_000);
    assert!((reference - target).abs() < 1e-5, "{reference} vs {target}");
    assert_eq!(run(40), run(40));
    steps.iter().map(|&n| (run(n) - reference).abs()).collect()
}

fn orders(err: &[f64]) -> Vec<f64> {
    err.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// On the `τ`-uniform clock the ODE lands on the conditional-mean trajectory
/// with error `O(1/N²)` already from 10 steps.
#[test]
fn ode_second_order_convergence() {
    let o = orders(&ode_errors(1.0, &[10, 20, 40]));
    assert!(o.iter().all(|o| *o >= 2.0), "{o:?}");
}

/// The default clock front-loads steps near `t = 0` and reaches the same
/// order asymptotically.
#[test]
fn ode_default_clock_is_asymptotically_second_order() {
    let o = orders(&ode_errors(BridgeSchedule::default().rho, &[40, 80, 160]));
    assert!(o.iter().all(|o| *o >= 1.85), "{o:?}");
}

#[test]
fn ode_agrees_with_sde_population_mean() {
    let f = stub(0.25);
    let ode = sample_probability_flow_ode(
        &f,
        &[-0.5],
        &[0.0],
        &SamplerConfig {
            steps: 200,
            ..Default::default()
        },
    )
    .unwrap()[0];
    let (m, _) = sde_population(
        &f,
        -0.5,
        SamplerConfig {
            steps: 1000,
            ..Default::default()
        },
        10_000,
    );
    assert!((ode - m).abs() < 3.0 * (0.25f64 / 10_000.0).sqrt(), "{ode} vs {m}");
}

/// Without churn the sampler is plain Euler–Maruyama in the `σ²` clock.
#[test]
fn zero_churn_is_plain_euler_maruyama() {
    let f = stub(0.5);
    let s = BridgeSchedule::default();
    let cfg = SamplerConfig {
        steps: 30,
        churn_step_ratio: 0.0,
        seed: 5,
        ..SamplerConfig::default()
    };
    let y = [0.2, -1.0, 3.0];
    let cond = [0.0; 3];
    let got = sample_reverse_sde(&f, &y, &cond, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = s.time_grid(30);
    let mut x = y.to_vec();
    for w in grid.windows(2) {
        let ds = w[0] * w[0] - w[1] * w[1];
        let u = f.eval(&x, &y, &cond, w[0]);
        let h = s.h_transform(&x, w[0], &y).unwrap();
        for i in 0..3 {
            let z: f64 = rng.sample(StandardNormal);
            x[i] += (u[i] - h[i]) * ds + ds.sqrt() * z;
        }
    }
    assert_eq!(got, x);
    let churned = sample_reverse_sde(
        &f,
        &y,
        &cond,
        &SamplerConfig {
            churn_step_ratio: 0.1,
            ..cfg
        },
    )
    .unwrap();
    assert_ne!(got, churned);
}

#[test]
fn single_step_is_finite_and_zero_steps_rejected() {
    let f = stub(0.25);
    let cfg = SamplerConfig {
        steps: 1,
        ..SamplerConfig::default()
    };
    for y in [-50.0, 0.0, 3.0] {
        assert!(sample_reverse_sde(&f, &[y], &[0.0], &cfg).unwrap()[0].is_finite());
        assert!(sample_probability_flow_ode(&f, &[y], &[0.0], &cfg).unwrap()[0].is_finite());
    }
    let zero = SamplerConfig {
        steps: 0,
        ..SamplerConfig::default()
    };
    assert!(matches!(
        sample_reverse_sde(&f, &[0.0], &[0.0], &zero),
        Err(BridgeError::Config(_))
    ));
}

struct Explode;

impl Field for Explode {
    fn eval(&self, x: &[f64], _: &[f64], _: &[f64], _: f64) -> Vec<f64> {
        vec![1e12; x.len()]
    }
}

#[test]
fn divergence_is_reported() {
    let r = sample_reverse_sde(&Explode, &[0.0], &[0.0], &SamplerConfig::default());
    assert!(matches!(r, Err(BridgeError::Divergence { step: 0, .. })));
}

struct Straight {
    x0: Vec<f64>,
}

impl Field for Straight {
    fn eval(&self, _: &[f64], y: &[f64], _: &[f64], _: f64) -> Vec<f64> {
        self.x0.iter().zip(y).map(|(a, b)| a - b).collect()
    }
}

#[test]
fn rectified_flow_follows_straight_paths() {
    let x0 = vec![0.3, -2.0, 5.0];
    let y = [1.0, 1.0, -1.0];
    for steps in [1, 3, 40] {
        let got = sample_rectified_flow(
            &Straight { x0: x0.clone() },
            &y,
            &[0.0; 3],
            &SamplerConfig {
                steps,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in got.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn binarize_cases() {
    let r = 2;
    let state: Vec<f64> = (0..8).flat_map(|c| [c as f64, 0.9]).collect();
    let g = occupancy_binarize(&state, r, 1).unwrap();
    assert!(!g.is_flagged());
    assert_eq!(g.value.occupancy, vec![1.0; 8]);
    let state: Vec<f64> = (0..8).flat_map(|c| [c as f64, 0.1]).collect();
    let g = occupancy_binarize(&state, r, 1).unwrap();
    assert_eq!(g.warning, Some(Warning::EmptySelection));
    assert_eq!(g.value.features, vec![0.0; 8]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let state: Vec<f64> = (0..27 * 3).map(|_| rng.gen_range(-1.0..2.0)).collect();
    let g = occupancy_binarize(&state, 3, 2).unwrap().value;
    for cell in 0..27 {
        let on = state[cell * 3 + 2] > 0.5;
        assert_eq!(g.occupancy[cell], if on { 1.0 } else { 0.0 });
        for k in 0..2 {
            assert_eq!(g.features[cell * 2 + k], if on { state[cell * 3 + k] } else { 0.0 });
        }
    }
    assert!(occupancy_binarize(&state, 2, 2).is_err());
}

#[test]
fn sampler_config_json() {
    let cfg: SamplerConfig = serde_json::from_str(r#"{"steps": 12, "seed": 4}"#).unwrap();
    assert_eq!(
        (cfg.steps, cfg.seed, cfg.churn_step_ratio, cfg.guidance),
        (12, 4, 0.1, 1.0)
    );
    assert_eq!(cfg.schedule, BridgeSchedule::default());
    let d = SamplerConfig::default();
    assert_eq!(d.steps, 40);
    let back: SamplerConfig = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
    assert_eq!(back, d);
    assert!(serde_json::from_str::<SamplerConfig>(r#"{"stepz": 3}"#).is_err());
    assert!(serde_json::from_str::<SamplerConfig>(r#"{"schedule": {"kind": "vp"}}"#).is_err());
    assert!(SamplerConfig {
        churn_step_ratio: 1.5,
        ..d
    }
    .validate()
    .is_err());
}
