//! Central finite differences against every hand-written backward pass.

use jga_core::{Coord, SparseVoxelTensor};
use jga_nn::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

type Forward<'a> = &'a dyn Fn(&ParameterStore, &[f64]) -> Vec<f64>;
type Backward<'a> = &'a dyn Fn(&mut ParameterStore, &[f64], &[f64]) -> Vec<f64>;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-7 {
        diff
    } else {
        diff / scale
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks parameter and input gradients of `loss = <r, f(x)>`.
fn check(store: &mut ParameterStore, x: &[f64], forward: Forward, backward: Backward, rng: &mut ChaCha8Rng, tol: f64) {
    let y = forward(store, x);
    let r = randn(rng, y.len());
    store.zero_grad();
    let gx = backward(store, x, &r);
    let loss = |s: &ParameterStore, x: &[f64]| dot(&r, &forward(s, x));

    let mut num_x = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let v = xp[i];
        xp[i] = v + H;
        let lp = loss(store, &xp);
        xp[i] = v - H;
        let lm = loss(store, &xp);
        xp[i] = v;
        num_x[i] = (lp - lm) / (2.0 * H);
    }
    let e = rel_err(&gx, &num_x);
    assert!(e < tol, "input gradient rel err {e}");

    let analytic = store.grads().to_vec();
    let mut num_p = vec![0.0; analytic.len()];
    for i in 0..analytic.len() {
        let v = store.values()[i];
        store.values_mut()[i] = v + H;
        let lp = loss(store, x);
        store.values_mut()[i] = v - H;
        let lm = loss(store, x);
        store.values_mut()[i] = v;
        num_p[i] = (lp - lm) / (2.0 * H);
    }
    for entry in store.entries() {
        let r = entry.offset..entry.offset + entry.len();
        let e = rel_err(&analytic[r.clone()], &num_p[r]);
        assert!(e < tol, "parameter `{}` rel err {e}", entry.name);
    }
}

fn random_coords(rng: &mut ChaCha8Rng, grid: i32, n: usize) -> Vec<Coord> {
    let mut set = std::collections::BTreeSet::new();
    while set.len() < n {
        set.insert([rng.gen_range(0..grid), rng.gen_range(0..grid), rng.gen_range(0..grid)]);
    }
    set.into_iter().collect()
}

/// Shifts gamma/beta and biases away from their init so every path is exercised.
fn perturb(store: &mut ParameterStore, rng: &mut ChaCha8Rng) {
    for v in store.values_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParameterStore::new();
    let lin = Linear::new(&mut store, "l", 5, 3, &mut rng).unwrap();
    perturb(&mut store, &mut rng);
    let x = randn(&mut rng, 7 * 5);
    check(
        &mut store,
        &x,
        &|s, x| lin.forward(s, x),
        &|s, x, g| lin.backward(s, x, g),
        &mut rng,
        1e-6,
    );
}

#[test]
fn silu_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParameterStore::new();
    let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-6.0..6.0)).collect();
    check(
        &mut store,
        &x,
        &|_, x| silu(x),
        &|_, x, g| silu_backward(x, g),
        &mut rng,
        1e-6,
    );
}

#[test]
fn group_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in [4, 12, 16] {
        let mut store = ParameterStore::new();
        let gn = GroupNorm::new(&mut store, "gn", c).unwrap();
        perturb(&mut store, &mut rng);
        let x = randn(&mut rng, 9 * c);
        check(
            &mut store,
            &x,
            &|s, x| gn.forward(s, x).0,
            &|s, x, g| {
                let (_, cache) = gn.forward(s, x);
                gn.backward(s, &cache, g)
            },
            &mut rng,
            1e-5,
        );
    }
}

#[test]
fn sparse_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (k, stride) in [(3, 1), (3, 2), (2, 2)] {
        let coords = random_coords(&mut rng, 8, 40);
        let (_, map) = KernelMap::conv(&coords, k, stride);
        let mut store = ParameterStore::new();
        let conv = Conv::new(&mut store, "c", k, 3, 4, &mut rng).unwrap();
        perturb(&mut store, &mut rng);
        let x = randn(&mut rng, coords.len() * 3);
        check(
            &mut store,
            &x,
            &|s, x| conv.forward(s, &map, x),
            &|s, x, g| conv.backward(s, &map, x, g),
            &mut rng,
            1e-6,
        );
    }
}

#[test]
fn transpose_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let coords = random_coords(&mut rng, 4, 12);
    let (_, map) = KernelMap::transpose(&coords, 2, 2, 8, None);
    let mut store = ParameterStore::new();
    let conv = Conv::new(&mut store, "t", 2, 4, 3, &mut rng).unwrap();
    let x = randn(&mut rng, coords.len() * 4);
    check(
        &mut store,
        &x,
        &|s, x| conv.forward(s, &map, x),
        &|s, x, g| conv.backward(s, &map, x, g),
        &mut rng,
        1e-6,
    );
}

#[test]
fn res_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (cin, cout, emb_dim) in [(4, 4, 0), (4, 8, 6)] {
        let coords = random_coords(&mut rng, 4, 30);
        let (_, map) = KernelMap::conv(&coords, 3, 1);
        let mut store = ParameterStore::new();
        let block = ResBlock::new(&mut store, "rb", cin, cout, emb_dim, &mut rng).unwrap();
        perturb(&mut store, &mut rng);
        let emb = randn(&mut rng, emb_dim);
        let emb_ref = (emb_dim > 0).then_some(&emb[..]);
        let x = randn(&mut rng, coords.len() * cin);
        check(
            &mut store,
            &x,
            &|s, x| block.forward(s, &map, x, emb_ref).0,
            &|s, x, g| {
                let (_, cache) = block.forward(s, &map, x, emb_ref);
                block.backward(s, &map, &cache, g).0
            },
            &mut rng,
            1e-5,
        );
        if emb_dim > 0 {
            let (y, cache) = block.forward(&store, &map, &x, emb_ref);
            let r = randn(&mut rng, y.len());
            let (_, gemb) = block.backward(&mut store, &map, &cache, &r);
            let num: Vec<f64> = (0..emb_dim)
                .map(|i| {
                    let mut e = emb.clone();
                    e[i] += H;
                    let lp = dot(&r, &block.forward(&store, &map, &x, Some(&e)).0);
                    e[i] -= 2.0 * H;
                    let lm = dot(&r, &block.forward(&store, &map, &x, Some(&e)).0);
                    (lp - lm) / (2.0 * H)
                })
                .collect();
            assert!(rel_err(&gemb, &num) < 1e-5);
        }
    }
}

#[test]
fn dense_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (k, stride) in [(3, 1), (3, 2), (2, 2)] {
        let input = DenseTensor::new(vec![4, 4, 4, 2], randn(&mut rng, 128)).unwrap();
        let weight = DenseTensor::new(vec![k, k, k, 2, 3], randn(&mut rng, k * k * k * 6)).unwrap();
        let y = dense_conv3d_fwd(&input, &weight, None, stride).unwrap();
        let r = randn(&mut rng, y.data.len());
        let g = dense_conv3d_bwd(
            &input,
            &weight,
            stride,
            &DenseTensor::new(y.dims.clone(), r.clone()).unwrap(),
        )
        .unwrap();
        let loss = |i: &DenseTensor, w: &DenseTensor| dot(&r, &dense_conv3d_fwd(i, w, None, stride).unwrap().data);
        let fd = |which: usize| -> Vec<f64> {
            let (mut i, mut w) = (input.clone(), weight.clone());
            let n = if which == 0 { i.data.len() } else { w.data.len() };
            (0..n)
                .map(|j| {
                    let buf = if which == 0 { &mut i.data } else { &mut w.data };
                    let v = buf[j];
                    buf[j] = v + H;
                    let lp = loss(&i, &w);
                    let buf = if which == 0 { &mut i.data } else { &mut w.data };
                    buf[j] = v - H;
                    let lm = loss(&i, &w);
                    let buf = if which == 0 { &mut i.data } else { &mut w.data };
                    buf[j] = v;
                    (lp - lm) / (2.0 * H)
                })
                .collect()
        };
        assert!(rel_err(&g.input.data, &fd(0)) < 1e-6);
        assert!(rel_err(&g.weight.data, &fd(1)) < 1e-6);
    }
}

#[test]
fn prune_gradient_routes_kept_rows() {
    let coords: Vec<Coord> = vec![[0, 0, 0], [0, 0, 1], [1, 1, 1], [2, 3, 1]];
    let t = SparseVoxelTensor::new(4, 1, 2, coords, (0..8).map(f64::from).collect()).unwrap();
    let p = prune(&t, &[1.0, -1.0, 0.5, -0.1]).unwrap().value;
    assert_eq!(p.kept, vec![0, 2]);
    let g = prune_backward(&p.kept, 4, 2, &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(g, vec![1.0, 2.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
}

#[test]
fn unet_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (levels, emb_dim) in [(2, 0), (3, 4)] {
        let coords = random_coords(&mut rng, 8, 40);
        let geo = UNetGeometry::new(&coords, 8, levels);
        let spec = UNetSpec {
            cin: 3,
            cout: 2,
            width: 4,
            levels,
            emb_dim,
            zero_head: false,
        };
        let mut store = ParameterStore::new();
        let net = SparseUNet::new(&mut store, "u", spec, &mut rng).unwrap();
        perturb(&mut store, &mut rng);
        let t = (emb_dim > 0).then_some(0.37);
        let x = randn(&mut rng, coords.len() * 3);
        check(
            &mut store,
            &x,
            &|s, x| net.forward(s, &geo, x, t).0,
            &|s, x, g| {
                let (_, cache) = net.forward(s, &geo, x, t);
                net.backward(s, &geo, &cache, g)
            },
            &mut rng,
            1e-5,
        );
    }
}
