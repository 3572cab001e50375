use jga_bridge::toy::TwoClusters;
use jga_bridge::*;
use jga_nn::{AdamConfig, ParameterStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Oracle {
    x0: Vec<f64>,
    schedule: BridgeSchedule,
}

impl Field for Oracle {
    fn eval(&self, x: &[f64], y: &[f64], _: &[f64], t: f64) -> Vec<f64> {
        self.schedule.score(x, &self.x0, y, t).unwrap()
    }
}

fn random_state(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn tiny_spec() -> DenoiserSpec {
    DenoiserSpec {
        resolution: 4,
        channels: 2,
        width: 4,
        levels: 2,
        emb_dim: 8,
    }
}

fn examples(seed: u64, n: usize) -> Vec<BridgeExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = tiny_spec().state_len();
    (0..n)
        .map(|_| BridgeExample {
            x0: random_state(&mut rng, len),
            y: random_state(&mut rng, len),
            cond: random_state(&mut rng, len),
        })
        .collect()
}

#[test]
fn perfect_score_has_zero_loss() {
    let s = BridgeSchedule::default();
    let ex = examples(1, 1).remove(0);
    let oracle = Oracle {
        x0: ex.x0.clone(),
        schedule: s,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in [0.01, 0.3, 0.9] {
        let eps: Vec<f64> = (0..ex.x0.len())
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        assert_eq!(bridge_loss(&oracle, &ex, &s, t, &eps).unwrap(), 0.0);
    }
}

/// Under the preconditioned parameterization the network loss equals the
/// weighted score loss of the bound field.
#[test]
fn network_loss_is_weighted_score_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParameterStore::new();
    let s = BridgeSchedule::default();
    let net = Denoiser::new(&mut store, "d", tiny_spec(), Objective::Bridge, s, &mut rng).unwrap();
    let ex = examples(4, 1).remove(0);
    let eps: Vec<f64> = (0..ex.x0.len())
        .map(|_| rng.sample(rand_distr::StandardNormal))
        .collect();
    let a = net
        .loss_and_grad(&mut store, &ex.x0, &ex.y, &ex.cond, 0.4, &eps, 1.0)
        .unwrap();
    let b = bridge_loss(&net.field(&store), &ex, &s, 0.4, &eps).unwrap();
    assert!((a - b).abs() < 1e-10 * a, "{a} vs {b}");
}

fn check_gradients(objective: Objective) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParameterStore::new();
    let net = Denoiser::new(
        &mut store,
        "d",
        tiny_spec(),
        objective,
        BridgeSchedule::default(),
        &mut rng,
    )
    .unwrap();
    let batch = examples(6, 2);
    store.zero_grad();
    net.train_step(&mut store, &batch, 9, 0).unwrap();
    let analytic = store.grads().to_vec();
    let h = 1e-6;
    for entry in store.entries().to_vec() {
        let picks: Vec<usize> = (0..entry.len().min(5))
            .map(|_| entry.offset + rng.gen_range(0..entry.len()))
            .collect();
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for &i in &picks {
            let v = store.values()[i];
            store.values_mut()[i] = v + h;
            let lp = net.train_step(&mut store, &batch, 9, 0).unwrap();
            store.values_mut()[i] = v - h;
            let lm = net.train_step(&mut store, &batch, 9, 0).unwrap();
            store.values_mut()[i] = v;
            num.push((lp - lm) / (2.0 * h));
            ana.push(analytic[i]);
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = num.iter().zip(&ana).map(|(a, b)| a - b).collect();
        let scale = norm(&num).max(norm(&ana));
        let err = if scale < 1e-7 { norm(&diff) } else { norm(&diff) / scale };
        assert!(err < 1e-4, "{}: {ana:?} vs {num:?}", entry.name);
    }
}

#[test]
fn bridge_loss_gradient_matches_finite_differences() {
    check_gradients(Objective::Bridge);
}

#[test]
fn flow_loss_gradient_matches_finite_differences() {
    check_gradients(Objective::RectifiedFlow);
}

fn train_pair(steps: usize) -> (BridgeTrainer, Vec<BridgeExample>, Vec<f64>) {
    let data = examples(7, 2);
    let adam = AdamConfig {
        lr: 2e-3,
        ..AdamConfig::default()
    };
    let mut tr = BridgeTrainer::new(tiny_spec(), Objective::Bridge, BridgeSchedule::default(), adam, 7).unwrap();
    let losses = (0..steps).map(|i| tr.step(&data[i % 2..i % 2 + 1]).unwrap()).collect();
    (tr, data, losses)
}

#[test]
fn training_reduces_smoothed_loss_and_uses_condition() {
    let (tr, data, losses) = train_pair(500);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&losses[..100]), mean(&losses[400..]));
    assert!(last < first, "{first} -> {last}");

    let ex = &data[0];
    let mut permuted = ex.cond.clone();
    permuted.reverse();
    let f = tr.denoiser.field(&tr.store);
    assert_ne!(
        f.eval(&ex.y, &ex.y, &ex.cond, 0.5),
        f.eval(&ex.y, &ex.y, &permuted, 0.5)
    );
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let (mut tr, mut data, _) = train_pair(1);
    data[0].x0[0] = f64::NAN;
    match tr.step(&data[..1]) {
        Err(BridgeError::NonFinite { iteration, .. }) => assert_eq!(iteration, 1),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn rectified_flow_interpolant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParameterStore::new();
    let spec = DenoiserSpec {
        resolution: 1,
        channels: 1,
        width: 4,
        levels: 1,
        emb_dim: 0,
    };
    let net = Denoiser::new(
        &mut store,
        "d",
        spec,
        Objective::RectifiedFlow,
        BridgeSchedule::default(),
        &mut rng,
    )
    .unwrap();
    // loss at t = 0.5 is ‖v(x_t) − (x0 − y)‖² with x_t = 1 for x0 = 0, y = 2
    let loss = net
        .loss_and_grad(&mut store, &[0.0], &[2.0], &[0.0], 0.5, &[0.0], 1.0)
        .unwrap();
    let v = net.predict(&store, &[1.0], &[2.0], &[0.0], 0.5)[0];
    assert!((loss - (v + 2.0) * (v + 2.0)).abs() < 1e-12);
}

fn toy_fraction(objective: Objective) -> f64 {
    let toy = TwoClusters::default();
    let tr = toy.train(objective, 1500, 32, 1).unwrap();
    let f = tr.denoiser.field(&tr.store);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let samples: Vec<f64> = (0..2000)
        .map(|seed| {
            let y = [toy.endpoint(&mut rng)];
            let cfg = SamplerConfig {
                seed,
                ..SamplerConfig::default()
            };
            match objective {
                Objective::Bridge => sample_reverse_sde(&f, &y, &[0.0], &cfg),
                Objective::RectifiedFlow => sample_rectified_flow(&f, &y, &[0.0], &cfg),
            }
            .unwrap()[0]
        })
        .collect();
    toy.second_fraction(&samples)
}

#[test]
fn two_cluster_proportions_are_recovered() {
    for objective in [Objective::Bridge, Objective::RectifiedFlow] {
        let p = toy_fraction(objective);
        assert!((p - 0.7).abs() < 0.05, "{objective:?}: {p}");
    }
}
