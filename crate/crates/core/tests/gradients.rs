//! Analytic gradients against central differences at random points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribe_core::gradcheck::grad_check;
use scribe_core::{Conv1dSpec, Graph, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn unit_rows(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = rand_tensor(shape, rng);
    let d = *shape.last().unwrap();
    for row in t.data_mut().chunks_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    t
}

/// Projects an output onto fixed random weights so every entry matters.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(g.value(y).shape(), &mut rng);
    let wv = g.input(w);
    let p = g.mul(y, wv).unwrap();
    g.sum(p)
}

fn check<F: Fn(&mut Graph, &[Var]) -> scribe_core::Result<Var>>(name: &str, build: F, inputs: Vec<Tensor>) {
    let r = grad_check(build, &inputs, H, TOL).unwrap();
    assert!(r.passed, "{name}: max rel err {:e}", r.max_rel_error);
}

#[test]
fn dense_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![rand_tensor(&[3, 4], &mut rng), rand_tensor(&[4, 5], &mut rng), rand_tensor(&[5], &mut rng)];
        check("dense", |g, v| {
            let y = g.dense(v[0], v[1], v[2])?;
            Ok(weighted_sum(g, y, 99))
        }, inputs);
    }
}

#[test]
fn conv1d_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let inputs = vec![rand_tensor(&[2, 4, 9], &mut rng), rand_tensor(&[6, 2, 3], &mut rng), rand_tensor(&[6], &mut rng)];
        let spec = Conv1dSpec { stride: 2, pad_left: 1, pad_right: 2, groups: 2 };
        check("conv1d", move |g, v| {
            let y = g.conv1d(v[0], v[1], v[2], spec)?;
            Ok(weighted_sum(g, y, 7))
        }, inputs);
    }
}

#[test]
fn relu_and_pooling_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let inputs = vec![rand_tensor(&[2, 3, 8], &mut rng)];
        check("relu/pool", |g, v| {
            let r = g.relu(v[0]);
            let p = g.avg_pool(r, 3)?;
            let q = g.global_avg_pool(v[0])?;
            let pr = g.permute(p, &[0, 2, 1])?;
            let f = g.reshape(pr, &[2, 6])?;
            let c = g.concat(&[f, q])?;
            Ok(weighted_sum(g, c, 3))
        }, inputs);
    }
}

#[test]
fn softmax_cross_entropy_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..9)).collect();
        let inputs = vec![rand_tensor(&[4, 9], &mut rng)];
        check("xent", move |g, v| g.softmax_cross_entropy(v[0], &labels), inputs);
    }
}

#[test]
fn l2_normalize_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let inputs = vec![rand_tensor(&[3, 5], &mut rng)];
        check("l2norm", |g, v| {
            let y = g.l2_normalize(v[0])?;
            Ok(weighted_sum(g, y, 5))
        }, inputs);
    }
}

#[test]
fn infonce_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let shared = vec![unit_rows(&[4, 3], &mut rng), unit_rows(&[4, 3], &mut rng), unit_rows(&[6, 3], &mut rng)];
        check("infonce shared", |g, v| g.infonce(v[0], v[1], v[2], 0.7), shared);
        let private = vec![unit_rows(&[3, 3], &mut rng), unit_rows(&[3, 3], &mut rng), unit_rows(&[3, 5, 3], &mut rng)];
        check("infonce per-anchor", |g, v| g.infonce(v[0], v[1], v[2], 1.0), private);
    }
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let inputs = vec![rand_tensor(&[5], &mut rng), rand_tensor(&[5], &mut rng)];
    check("elementwise", |g, v| {
        let a = g.add(v[0], v[1])?;
        let m = g.mul(a, v[0])?;
        let s = g.square(m);
        let c = g.scale(s, 0.3);
        Ok(g.sum(c))
    }, inputs);
}

#[test]
fn dense_is_linear_without_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&[3, 4], &mut rng);
    let w = rand_tensor(&[4, 2], &mut rng);
    let alpha = 2.75;
    let mut g = Graph::new();
    let (xv, xs) = (g.input(x.clone()), g.input(x.map(|v| alpha * v)));
    let (wv, bv) = (g.input(w), g.input(Tensor::zeros(&[2])));
    let y = g.dense(xv, wv, bv).unwrap();
    let ys = g.dense(xs, wv, bv).unwrap();
    for (a, b) in g.value(y).data().iter().zip(g.value(ys).data()) {
        assert!((alpha * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn backward_is_deterministic() {
    let grads = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new();
        let x = g.param(rand_tensor(&[4, 3, 12], &mut rng));
        let k = g.param(rand_tensor(&[5, 3, 4], &mut rng));
        let b = g.param(rand_tensor(&[5], &mut rng));
        let y = g.conv1d(x, k, b, Conv1dSpec::new(1, 1)).unwrap();
        let r = g.relu(y);
        let p = g.global_avg_pool(r).unwrap();
        let loss = g.softmax_cross_entropy(p, &[0, 1, 2, 3]).unwrap();
        g.backward(loss).unwrap();
        [x, k, b].map(|v| g.grad(v).unwrap().to_vec())
    };
    let (a, b) = (grads(), grads());
    for (ga, gb) in a.iter().zip(&b) {
        assert!(ga.iter().zip(gb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
