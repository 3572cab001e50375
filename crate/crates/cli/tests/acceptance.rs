//! Acceptance criteria, one PASS/FAIL line each. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test -p jga-cli --test acceptance -- 6 7`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use jga_bridge::toy::TwoClusters;
use jga_bridge::*;
use jga_cli::{run_all, run_stage, PipelineConfig, Stage, VaeReport};
use jga_core::{Camera, Coord, Cube, GaussianAttributes, GaussianSet, Image, LossWeights, SmplMesh, SparseVoxelTensor};
use jga_io::{synth_scene_with, SceneKind, SynthOptions};
use jga_metrics::{chamfer, normal_error, p2s, MetricsReport};
use jga_nn::*;
use jga_render::{psnr, rasterize, rasterize_backward, ssim, RenderConfig};
use jga_vae::{LatentDistribution, RenderView, TrainScene, Vae, VaeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Forward<'a> = &'a dyn Fn(&ParameterStore, &[f64]) -> Vec<f64>;
type Backward<'a> = &'a dyn Fn(&mut ParameterStore, &[f64], &[f64]) -> Vec<f64>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-7 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pinned forward SDE simulated by Euler–Maruyama against the closed-form
/// marginal.
fn bridge_closed_forms() -> Outcome {
    let s = BridgeSchedule::default();
    let (paths, steps) = (100_000, 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = vec![1.0; paths];
    let mut x = vec![0.0; paths];
    let dt = 1.0 / steps as f64;
    let mut worst: f64 = 0.0;
    for i in 0..steps {
        let t = i as f64 * dt;
        let h = s.h_transform(&x, t, &y).map_err(|e| e.to_string())?;
        let g2 = s.g2(t);
        for (xi, hi) in x.iter_mut().zip(&h) {
            let z: f64 = rng.sample(StandardNormal);
            *xi += g2 * hi * dt + (g2 * dt).sqrt() * z;
        }
        if [100, 500, 900].contains(&(i + 1)) {
            let probe = (i + 1) as f64 * dt;
            let (mean, var) = s.marginal(&[0.0], &[1.0], probe).map_err(|e| e.to_string())?;
            let (m, v) = moments(&x);
            let n = paths as f64;
            worst = worst
                .max((m - mean[0]).abs() / (var / n).sqrt())
                .max((v - var).abs() / (var * (2.0 / n).sqrt()));
        }
    }
    let v0 = s.marginal(&[0.0], &[1.0], 0.0).map_err(|e| e.to_string())?.1;
    let v1 = s.marginal(&[0.0], &[1.0], 1.0).map_err(|e| e.to_string())?.1;
    ensure(
        worst < 3.0 && v0 == 0.0 && v1 == 0.0,
        format!("worst moment error {worst:.2} standard errors; endpoint variances {v0}, {v1}"),
    )
}

fn score_correctness() -> Outcome {
    let s = BridgeSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let log_density = |x: f64, x0: f64, y: f64, t: f64| {
        let (m, v) = s.marginal(&[x0], &[y], t).unwrap();
        -(x - m[0]).powi(2) / (2.0 * v) - 0.5 * (2.0 * std::f64::consts::PI * v).ln()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (x0, y, t) = (
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(0.05..0.95),
        );
        let (m, v) = s.marginal(&[x0], &[y], t).unwrap();
        let x = m[0] + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let h = 1e-5 * v.sqrt();
        let fd = (log_density(x + h, x0, y, t) - log_density(x - h, x0, y, t)) / (2.0 * h);
        let score = s.score(&[x], &[x0], &[y], t).unwrap()[0];
        worst = worst.max((fd - score).abs() / score.abs().max(1e-3));
    }
    ensure(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 100 configurations"),
    )
}

/// Analytic-score stub: `x0 ~ N(0.7, 0.25)`, scalar grid, `y = −0.5`.
fn sampler_fidelity() -> Outcome {
    let field = GaussianEndpoint {
        mean: 0.7,
        var: 0.25,
        schedule: BridgeSchedule::default(),
    };
    let runs = 10_000u64;
    let cfg = SamplerConfig {
        steps: 1000,
        ..SamplerConfig::default()
    };
    let xs: Vec<f64> = (0..runs)
        .map(|seed| sample_reverse_sde(&field, &[-0.5], &[0.0], &SamplerConfig { seed, ..cfg }).unwrap()[0])
        .collect();
    let (m, v) = moments(&xs);
    let n = runs as f64;
    let zm = (m - 0.7).abs() / (0.25 / n).sqrt();
    let zv = (v - 0.25).abs() / (0.25 * (2.0 / n).sqrt());

    let schedule = BridgeSchedule {
        rho: 1.0,
        ..BridgeSchedule::default()
    };
    let f = GaussianEndpoint { schedule, ..field };
    let ode = |steps| {
        let c = SamplerConfig {
            steps,
            schedule,
            ..SamplerConfig::default()
        };
        sample_probability_flow_ode(&f, &[-0.5], &[0.0], &c).unwrap()[0]
    };
    let reference = ode(20_000);
    let err: Vec<f64> = [10, 20, 40].iter().map(|&n| (ode(n) - reference).abs()).collect();
    let orders: Vec<f64> = err.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    ensure(
        zm < 3.0 && zv < 3.0 && orders.iter().all(|o| *o >= 2.0),
        format!("SDE mean {m:.4} ({zm:.2} se), var {v:.4} ({zv:.2} se); ODE orders {orders:.2?}"),
    )
}

const H: f64 = 1e-6;

/// Input and parameter gradients of `<r, f(x)>` against central differences.
fn layer_check(
    store: &mut ParameterStore,
    x: &[f64],
    forward: Forward,
    backward: Backward,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let r = randn(rng, forward(store, x).len());
    store.zero_grad();
    let gx = backward(store, x, &r);
    let loss = |s: &ParameterStore, x: &[f64]| dot(&r, &forward(s, x));
    let mut xp = x.to_vec();
    let num_x: Vec<f64> = (0..x.len())
        .map(|i| {
            let v = xp[i];
            xp[i] = v + H;
            let lp = loss(store, &xp);
            xp[i] = v - H;
            let lm = loss(store, &xp);
            xp[i] = v;
            (lp - lm) / (2.0 * H)
        })
        .collect();
    let mut worst = rel_err(&gx, &num_x);
    let analytic = store.grads().to_vec();
    let num_p: Vec<f64> = (0..analytic.len())
        .map(|i| {
            let v = store.values()[i];
            store.values_mut()[i] = v + H;
            let lp = loss(store, x);
            store.values_mut()[i] = v - H;
            let lm = loss(store, x);
            store.values_mut()[i] = v;
            (lp - lm) / (2.0 * H)
        })
        .collect();
    for entry in store.entries() {
        let r = entry.offset..entry.offset + entry.len();
        worst = worst.max(rel_err(&analytic[r.clone()], &num_p[r]));
    }
    worst
}

/// Parameter gradients of a scalar loss, sampling a few entries per tensor.
fn sampled_check(store: &mut ParameterStore, rng: &mut ChaCha8Rng, loss: &dyn Fn(&mut ParameterStore) -> f64) -> f64 {
    store.zero_grad();
    loss(store);
    let analytic = store.grads().to_vec();
    let mut worst: f64 = 0.0;
    for entry in store.entries().to_vec() {
        let picks: Vec<usize> = (0..entry.len().min(4))
            .map(|_| entry.offset + rng.gen_range(0..entry.len()))
            .collect();
        let mut num = Vec::new();
        for &i in &picks {
            let v = store.values()[i];
            store.values_mut()[i] = v + H;
            let lp = loss(store);
            store.values_mut()[i] = v - H;
            let lm = loss(store);
            store.values_mut()[i] = v;
            store.zero_grad();
            num.push((lp - lm) / (2.0 * H));
        }
        let ana: Vec<f64> = picks.iter().map(|&i| analytic[i]).collect();
        worst = worst.max(rel_err(&ana, &num));
    }
    worst
}

fn random_coords(rng: &mut ChaCha8Rng, grid: i32, n: usize) -> Vec<Coord> {
    let mut set = BTreeSet::new();
    while set.len() < n {
        set.insert([0; 3].map(|_| rng.gen_range(0..grid)));
    }
    set.into_iter().collect()
}

fn perturb(store: &mut ParameterStore, rng: &mut ChaCha8Rng) {
    for v in store.values_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
}

fn small_scene(seed: u64) -> TrainScene {
    let opts = SynthOptions {
        resolution: 16,
        views: 2,
        image_size: 16,
        ..SynthOptions::default()
    };
    let s = synth_scene_with(SceneKind::Sphere, 3000, seed, &opts).unwrap();
    TrainScene {
        gt: jga_core::voxelize(&s.gaussians, 16).unwrap(),
        views: s
            .views
            .iter()
            .map(|v| RenderView {
                camera: v.camera.clone(),
                image: v.image.clone(),
            })
            .collect(),
        bounds: s.gaussians.bounds,
    }
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut results: Vec<(&str, f64)> = Vec::new();

    let mut store = ParameterStore::new();
    let lin = Linear::new(&mut store, "l", 5, 3, &mut rng).unwrap();
    perturb(&mut store, &mut rng);
    let x = randn(&mut rng, 35);
    results.push((
        "linear",
        layer_check(
            &mut store,
            &x,
            &|s, x| lin.forward(s, x),
            &|s, x, g| lin.backward(s, x, g),
            &mut rng,
        ),
    ));

    let mut store = ParameterStore::new();
    let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-6.0..6.0)).collect();
    results.push((
        "silu",
        layer_check(
            &mut store,
            &x,
            &|_, x| silu(x),
            &|_, x, g| silu_backward(x, g),
            &mut rng,
        ),
    ));

    let mut store = ParameterStore::new();
    let gn = GroupNorm::new(&mut store, "gn", 16).unwrap();
    perturb(&mut store, &mut rng);
    let x = randn(&mut rng, 9 * 16);
    let e = layer_check(
        &mut store,
        &x,
        &|s, x| gn.forward(s, x).0,
        &|s, x, g| {
            let (_, cache) = gn.forward(s, x);
            gn.backward(s, &cache, g)
        },
        &mut rng,
    );
    results.push(("group norm", e));

    for (k, stride) in [(3, 1), (3, 2), (2, 2)] {
        let coords = random_coords(&mut rng, 8, 40);
        let (_, map) = KernelMap::conv(&coords, k, stride);
        let mut store = ParameterStore::new();
        let conv = Conv::new(&mut store, "c", k, 3, 4, &mut rng).unwrap();
        perturb(&mut store, &mut rng);
        let x = randn(&mut rng, coords.len() * 3);
        let e = layer_check(
            &mut store,
            &x,
            &|s, x| conv.forward(s, &map, x),
            &|s, x, g| conv.backward(s, &map, x, g),
            &mut rng,
        );
        results.push(("sparse conv", e));
    }

    let coords = random_coords(&mut rng, 4, 12);
    let (_, map) = KernelMap::transpose(&coords, 2, 2, 8, None);
    let mut store = ParameterStore::new();
    let conv = Conv::new(&mut store, "t", 2, 4, 3, &mut rng).unwrap();
    let x = randn(&mut rng, coords.len() * 4);
    let e = layer_check(
        &mut store,
        &x,
        &|s, x| conv.forward(s, &map, x),
        &|s, x, g| conv.backward(s, &map, x, g),
        &mut rng,
    );
    results.push(("transpose conv", e));

    let coords = random_coords(&mut rng, 4, 30);
    let (_, map) = KernelMap::conv(&coords, 3, 1);
    let mut store = ParameterStore::new();
    let block = ResBlock::new(&mut store, "rb", 4, 8, 6, &mut rng).unwrap();
    perturb(&mut store, &mut rng);
    let emb = randn(&mut rng, 6);
    let x = randn(&mut rng, coords.len() * 4);
    let e = layer_check(
        &mut store,
        &x,
        &|s, x| block.forward(s, &map, x, Some(&emb)).0,
        &|s, x, g| {
            let (_, cache) = block.forward(s, &map, x, Some(&emb));
            block.backward(s, &map, &cache, g).0
        },
        &mut rng,
    );
    results.push(("res block", e));

    let coords = random_coords(&mut rng, 8, 40);
    let geo = UNetGeometry::new(&coords, 8, 3);
    let spec = UNetSpec {
        cin: 3,
        cout: 2,
        width: 4,
        levels: 3,
        emb_dim: 4,
        zero_head: false,
    };
    let mut store = ParameterStore::new();
    let net = SparseUNet::new(&mut store, "u", spec, &mut rng).unwrap();
    perturb(&mut store, &mut rng);
    let x = randn(&mut rng, coords.len() * 3);
    let e = layer_check(
        &mut store,
        &x,
        &|s, x| net.forward(s, &geo, x, Some(0.37)).0,
        &|s, x, g| {
            let (_, cache) = net.forward(s, &geo, x, Some(0.37));
            net.backward(s, &geo, &cache, g)
        },
        &mut rng,
    );
    results.push(("u-net", e));

    let cfg = VaeConfig {
        resolution: 16,
        enc_widths: [4, 4, 4],
        dec_widths: [4, 4, 4, 4],
        weights: LossWeights::published(),
        ..VaeConfig::default()
    };
    let mut store = ParameterStore::new();
    let vae = Vae::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let scene = small_scene(7);
    let rc = RenderConfig::exact();
    let latent_coords = jga_core::voxel::downsample_coords(scene.gt.coords(), 8);
    let eps = LatentDistribution::from_rows(2, 4, &latent_coords, &vec![0.0; latent_coords.len() * 8]).noise(11);
    let e = sampled_check(&mut store, &mut rng, &|s| {
        vae.loss_and_grad(s, &scene, Some(&eps), false, &scene.views, &rc)
            .unwrap()
            .loss
    });
    results.push(("vae loss", e));

    let spec = DenoiserSpec {
        resolution: 4,
        channels: 2,
        width: 4,
        levels: 2,
        emb_dim: 8,
    };
    let mut store = ParameterStore::new();
    let den = Denoiser::new(
        &mut store,
        "d",
        spec,
        Objective::Bridge,
        BridgeSchedule::default(),
        &mut rng,
    )
    .unwrap();
    let batch: Vec<BridgeExample> = (0..2)
        .map(|_| BridgeExample {
            x0: randn(&mut rng, spec.state_len()),
            y: randn(&mut rng, spec.state_len()),
            cond: randn(&mut rng, spec.state_len()),
        })
        .collect();
    let e = sampled_check(&mut store, &mut rng, &|s| den.train_step(s, &batch, 9, 0).unwrap());
    results.push(("bridge loss", e));

    let cam = Camera::look_at([0.3, -0.2, -2.5], [0.0; 3], [0.0, -1.0, 0.0], 18.0, 18.0, 16, 16);
    let gs: Vec<GaussianAttributes> = (0..3)
        .map(|_| GaussianAttributes {
            position: [0; 3].map(|_| rng.gen_range(-0.3..0.3)),
            color: [0; 3].map(|_| rng.gen_range(0.0..1.0)),
            log_scale: [0; 3].map(|_| rng.gen_range(-1.8..-0.9)),
            rotation: [0; 4].map(|_| rng.gen_range(-1.0..1.0)),
            opacity_logit: rng.gen_range(-1.0..1.5),
        })
        .collect();
    let weights = Image::new(16, 16, 3, randn(&mut rng, 768)).unwrap();
    let rc = RenderConfig::exact();
    let set = GaussianSet::new(gs.clone(), Cube::default()).unwrap();
    let grads = rasterize_backward(&set, &cam, &rc, &weights).unwrap();
    let flat = |g: &GaussianAttributes| {
        let mut v = g.position.to_vec();
        v.extend(g.color);
        v.extend(g.log_scale);
        v.extend(g.rotation);
        v.push(g.opacity_logit);
        v
    };
    let (mut ana, mut num) = (Vec::new(), Vec::new());
    for (gi, g) in gs.iter().enumerate() {
        let d = &grads[gi];
        ana.extend(d.position);
        ana.extend(d.color);
        ana.extend(d.log_scale);
        ana.extend(d.rotation);
        ana.push(d.opacity_logit);
        for p in 0..14 {
            let eval = |delta: f64| {
                let mut v = flat(g);
                v[p] += delta;
                let mut moved = gs.clone();
                moved[gi] = GaussianAttributes {
                    position: [v[0], v[1], v[2]],
                    color: [v[3], v[4], v[5]],
                    log_scale: [v[6], v[7], v[8]],
                    rotation: [v[9], v[10], v[11], v[12]],
                    opacity_logit: v[13],
                };
                let s = GaussianSet::new(moved, Cube::default()).unwrap();
                dot(&rasterize(&s, &cam, &rc).unwrap().value.image.data, &weights.data)
            };
            num.push((eval(H) - eval(-H)) / (2.0 * H));
        }
    }
    results.push(("rasterizer", rel_err(&ana, &num)));

    let (name, worst) = results.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    ensure(
        worst < 1e-4,
        format!("{} checks, worst relative error {worst:.2e} ({name})", results.len()),
    )
}

fn random_tensor(rng: &mut ChaCha8Rng, res: usize, stride: usize, c: usize) -> SparseVoxelTensor {
    let grid = (res / stride) as i32;
    let n = rng.gen_range(1..=(grid as usize).pow(3).min(120));
    let coords = random_coords(rng, grid, n);
    let feats = randn(rng, coords.len() * c);
    SparseVoxelTensor::new(res, stride, c, coords, feats).unwrap()
}

fn to_dense(t: &SparseVoxelTensor) -> DenseTensor {
    let g = t.resolution() / t.stride();
    let c = t.channels();
    let mut d = DenseTensor::zeros(vec![g, g, g, c]);
    for (i, p) in t.coords().iter().enumerate() {
        let cell = (p[0] as usize * g + p[1] as usize) * g + p[2] as usize;
        d.data[cell * c..(cell + 1) * c].copy_from_slice(t.row(i));
    }
    d
}

fn footprint_oracle(t: &SparseVoxelTensor, w: &[f64], k: usize, cout: usize) -> BTreeMap<Coord, Vec<f64>> {
    let grid = (t.resolution() / t.stride()) as i32 * 2;
    let cin = t.channels();
    let pad = if k % 2 == 1 { (k as i32 - 1) / 2 } else { 0 };
    let mut out: BTreeMap<Coord, Vec<f64>> = BTreeMap::new();
    for (i, p) in t.coords().iter().enumerate() {
        for tap in 0..k * k * k {
            let off = [tap / (k * k), tap / k % k, tap % k].map(|v| v as i32 - pad);
            let o = [0, 1, 2].map(|d| 2 * p[d] + off[d]);
            if o.iter().any(|v| *v < 0 || *v >= grid) {
                continue;
            }
            let acc = out.entry(o).or_insert_with(|| vec![0.0; cout]);
            for ci in 0..cin {
                for (co, a) in acc.iter_mut().enumerate() {
                    *a += t.row(i)[ci] * w[(tap * cin + ci) * cout + co];
                }
            }
        }
    }
    out
}

fn sparse_op_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let res = [4, 8, 16][case % 3];
        let (k, stride) = [(3, 1), (3, 2), (2, 2), (1, 1)][case % 4];
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let t = random_tensor(&mut rng, res, 1, cin);
        let w = randn(&mut rng, k * k * k * cin * cout);
        let bias = randn(&mut rng, cout);
        let (out, _) = sparse_conv3d_fwd(&t, &w, Some(&bias), k, cout, stride).unwrap();
        let dense = dense_conv3d_fwd(
            &to_dense(&t),
            &DenseTensor::new(vec![k, k, k, cin, cout], w).unwrap(),
            Some(&bias),
            stride,
        )
        .unwrap();
        let g = dense.dims[0];
        let expected: BTreeSet<Coord> = t.coords().iter().map(|c| c.map(|v| v / stride as i32)).collect();
        if out.coords() != expected.into_iter().collect::<Vec<_>>().as_slice() {
            return Err(format!("sparse conv case {case}: output coordinates differ"));
        }
        for (i, p) in out.coords().iter().enumerate() {
            let cell = (p[0] as usize * g + p[1] as usize) * g + p[2] as usize;
            worst = worst.max(rel_err(out.row(i), &dense.data[cell * cout..(cell + 1) * cout]));
        }
    }
    for case in 0..200 {
        let res = [8, 16][case % 2];
        let k = [2, 3][case % 2];
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let t = random_tensor(&mut rng, res, 2, cin);
        let w = randn(&mut rng, k * k * k * cin * cout);
        let (out, _) = gen_sparse_transpose_conv3d_fwd(&t, &w, None, k, cout, 2, None, None).unwrap();
        let oracle = footprint_oracle(&t, &w, k, cout);
        if !out.coords().iter().eq(oracle.keys()) {
            return Err(format!("transpose conv case {case}: generated coordinates differ"));
        }
        for (i, v) in oracle.values().enumerate() {
            worst = worst.max(rel_err(out.row(i), v));
        }
    }
    for case in 0..200 {
        let t = random_tensor(&mut rng, 8, 1, 2);
        let logits = (0..t.len()).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        let p = prune(&t, &logits).unwrap();
        let keep: Vec<usize> = (0..t.len())
            .filter(|&i| 1.0 / (1.0 + (-logits[i]).exp()) > 0.5)
            .collect();
        let coords: Vec<Coord> = keep.iter().map(|&i| t.coords()[i]).collect();
        let feats: Vec<f64> = keep.iter().flat_map(|&i| t.row(i).to_vec()).collect();
        if p.value.tensor.coords() != coords.as_slice() || p.value.tensor.features() != feats.as_slice() {
            return Err(format!("prune case {case} differs from the scan"));
        }
    }
    ensure(
        worst < 1e-12,
        format!("600 cases, worst relative deviation {worst:.1e}"),
    )
}

/// The `desk` pipeline run shared by the autoencoder and end-to-end criteria.
fn desk() -> &'static (tempfile::TempDir, PipelineConfig) {
    static DESK: OnceLock<(tempfile::TempDir, PipelineConfig)> = OnceLock::new();
    DESK.get_or_init(|| {
        (
            tempfile::tempdir().expect("temporary directory"),
            PipelineConfig::preset("desk").expect("built-in preset"),
        )
    })
}

fn run_stages(stages: &[Stage]) -> Result<(), String> {
    let (dir, cfg) = desk();
    for &stage in stages {
        run_stage(stage, dir.path(), cfg).map_err(|e| format!("{e:#}"))?;
    }
    Ok(())
}

fn vae_overfit() -> Outcome {
    let (dir, cfg) = desk();
    run_stages(&[Stage::Synth, Stage::Voxelize, Stage::TrainVae])?;
    let report: VaeReport = jga_io::read_json(&dir.path().join("train-vae/report.json")).map_err(|e| e.to_string())?;
    let worst_attr = report.scenes.iter().map(|(_, s)| s.attr).fold(0.0, f64::max);
    let worst_iou = report.scenes.iter().map(|(_, s)| s.iou).fold(1.0, f64::min);
    ensure(
        report.scenes.len() == 4
            && cfg.resolution == 64
            && cfg.vae.latent_resolution() == 8
            && cfg.vae.latent_channels == 4
            && report.iterations <= 5000
            && worst_attr < 0.01
            && worst_iou > 0.9,
        format!(
            "{} scenes, {} iterations: max L_Attr {worst_attr:.4}, min IoU {worst_iou:.3}",
            report.scenes.len(),
            report.iterations
        ),
    )
}

/// Memorization-level check: the held-out views belong to training scenes.
fn bridge_end_to_end() -> Outcome {
    let (dir, cfg) = desk();
    if !dir.path().join("train-vae/vae.jgat").exists() {
        run_stages(&[Stage::Synth, Stage::Voxelize, Stage::TrainVae])?;
    }
    run_stages(&[
        Stage::TrainUnify,
        Stage::Encode,
        Stage::TrainBridge,
        Stage::Sample,
        Stage::Decode,
        Stage::Render,
        Stage::Eval,
    ])?;
    let report: MetricsReport = jga_io::read_json(&dir.path().join("eval/metrics.json")).map_err(|e| e.to_string())?;
    let worst_cd = report.scenes.iter().map(|(_, m)| m.cd).fold(0.0, f64::max);
    let worst_psnr = report.scenes.iter().map(|(_, m)| m.psnr).fold(f64::INFINITY, f64::min);
    ensure(
        cfg.bridge.steps <= 5000
            && cfg.sample.churn_step_ratio == 0.1
            && cfg.sample.guidance == 1.0
            && worst_cd < 0.05
            && worst_psnr > 20.0,
        format!(
            "{} training scenes, {} bridge steps: max Chamfer {worst_cd:.4}, min held-out PSNR {worst_psnr:.2} dB",
            report.scenes.len(),
            cfg.bridge.steps
        ),
    )
}

fn rectified_flow_parity() -> Outcome {
    let toy = TwoClusters::default();
    let mut parts = Vec::new();
    let mut ok = true;
    for objective in [Objective::Bridge, Objective::RectifiedFlow] {
        let tr = toy.train(objective, 1500, 32, 1).map_err(|e| e.to_string())?;
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
                .map(|x| x[0])
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let p = toy.second_fraction(&samples);
        ok &= (p - toy.weight).abs() < 0.05;
        parts.push(format!("{objective:?} {p:.3}"));
    }
    ensure(
        ok,
        format!("second-cluster fraction (true {}): {}", toy.weight, parts.join(", ")),
    )
}

fn metric_self_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cloud = |rng: &mut ChaCha8Rng, n: usize| -> Vec<[f64; 3]> {
        (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect()
    };
    let dist =
        |a: &[f64; 3], b: &[f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    let nearest = |p: &[f64; 3], q: &[[f64; 3]]| {
        (0..q.len())
            .min_by(|&a, &b| dist(p, &q[a]).total_cmp(&dist(p, &q[b])).then(a.cmp(&b)))
            .unwrap()
    };
    let mut failures = Vec::new();

    for _ in 0..20 {
        let (n, m) = (rng.gen_range(1..150), rng.gen_range(1..150));
        let (a, b) = (cloud(&mut rng, n), cloud(&mut rng, m));
        let one =
            |x: &[[f64; 3]], y: &[[f64; 3]]| x.iter().map(|p| dist(p, &y[nearest(p, y)])).sum::<f64>() / x.len() as f64;
        let brute = 0.5 * (one(&a, &b) + one(&b, &a));
        if (chamfer(&a, &b).unwrap() - brute).abs() > 1e-12 || chamfer(&a, &a).unwrap() != 0.0 {
            failures.push("chamfer");
        }
    }

    let big = SmplMesh::new(
        vec![[-10.0, -10.0, 0.0], [10.0, -10.0, 0.0], [0.0, 10.0, 0.0]],
        vec![[0, 1, 2]],
    )
    .unwrap();
    if (p2s(&[[0.1, 0.2, 0.37]], &big).unwrap() - 0.37).abs() > 1e-12 {
        failures.push("p2s plane");
    }
    let verts = cloud(&mut rng, 60);
    let mesh = SmplMesh::new(verts, (0..20).map(|f| [3 * f, 3 * f + 1, 3 * f + 2]).collect()).unwrap();
    let pts = cloud(&mut rng, 50);
    let seg = |p: [f64; 3], u: [f64; 3], v: [f64; 3]| {
        let d = [0, 1, 2].map(|i| v[i] - u[i]);
        let t = ([0, 1, 2].map(|i| (p[i] - u[i]) * d[i]).iter().sum::<f64>() / d.iter().map(|x| x * x).sum::<f64>())
            .clamp(0.0, 1.0);
        dist(&p, &[0, 1, 2].map(|i| u[i] + t * d[i]))
    };
    let tri_dist = |p: [f64; 3], [a, b, c]: [[f64; 3]; 3]| {
        let sub = |x: [f64; 3], y: [f64; 3]| [0, 1, 2].map(|i| x[i] - y[i]);
        let cross = |x: [f64; 3], y: [f64; 3]| {
            [
                x[1] * y[2] - x[2] * y[1],
                x[2] * y[0] - x[0] * y[2],
                x[0] * y[1] - x[1] * y[0],
            ]
        };
        let dt = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
        let n = cross(sub(b, a), sub(c, a));
        let n = n.map(|v| v / dt(n, n).sqrt());
        let h = dt(sub(p, a), n);
        let q = [0, 1, 2].map(|i| p[i] - h * n[i]);
        if [(a, b), (b, c), (c, a)]
            .iter()
            .all(|&(u, v)| dt(cross(sub(v, u), sub(q, u)), n) >= 0.0)
        {
            h.abs()
        } else {
            seg(p, a, b).min(seg(p, b, c)).min(seg(p, c, a))
        }
    };
    let brute = pts
        .iter()
        .map(|p| {
            (0..20)
                .map(|f| tri_dist(*p, mesh.triangle(f)))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / 50.0;
    if (p2s(&pts, &mesh).unwrap() - brute).abs() > 1e-9 {
        failures.push("p2s brute force");
    }

    let unit = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|x| x / n)
    };
    let p = cloud(&mut rng, 40);
    let n: Vec<[f64; 3]> = cloud(&mut rng, 40).into_iter().map(unit).collect();
    let flipped: Vec<[f64; 3]> = n.iter().map(|v| v.map(|x| -x)).collect();
    if normal_error(&p, &n, &p, &n).unwrap() != 0.0 || normal_error(&p, &flipped, &p, &n).unwrap() != 180.0 {
        failures.push("normal error identities");
    }
    let q = cloud(&mut rng, 60);
    let m: Vec<[f64; 3]> = q.iter().map(|v| unit(*v)).collect();
    let brute = p
        .iter()
        .zip(&n)
        .map(|(x, nx)| {
            let j = nearest(x, &q);
            (nx[0] * m[j][0] + nx[1] * m[j][1] + nx[2] * m[j][2])
                .clamp(-1.0, 1.0)
                .acos()
                .to_degrees()
        })
        .sum::<f64>()
        / 40.0;
    if (normal_error(&p, &n, &q, &m).unwrap() - brute).abs() > 1e-6 {
        failures.push("normal error brute force");
    }

    let img = Image::new(16, 16, 3, (0..768).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let (s, p) = (ssim(&img, &img).unwrap(), psnr(&img, &img).unwrap());
    if s != 1.0 {
        failures.push("ssim(I, I)");
    }
    if p != 100.0 {
        failures.push("psnr cap");
    }
    failures.dedup();
    ensure(
        failures.is_empty(),
        format!("ssim(I, I) = {s}, psnr(I, I) = {p} dB; failures: {failures:?}"),
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    files
}

fn determinism() -> Outcome {
    let cfg = PipelineConfig::preset("desk-sphere").map_err(|e| e.to_string())?;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_all(d.path(), &cfg).map_err(|e| format!("{e:#}"))?;
    }
    let [a, b] = [tree(dirs[0].path()), tree(dirs[1].path())];
    let differing: Vec<_> = a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).collect();
    ensure(
        differing.is_empty(),
        format!(
            "{} files, {} bytes; differing: {differing:?}",
            a.len(),
            a.values().map(Vec::len).sum::<usize>()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("bridge closed forms", bridge_closed_forms),
        ("score correctness", score_correctness),
        ("sampler fidelity", sampler_fidelity),
        ("gradient suite", gradient_suite),
        ("sparse-op oracles", sparse_op_oracles),
        ("VAE overfit", vae_overfit),
        ("bridge end-to-end toy", bridge_end_to_end),
        ("rectified-flow parity", rectified_flow_parity),
        ("metric self-consistency", metric_self_consistency),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {n:>2} {name}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
