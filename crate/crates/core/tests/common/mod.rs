//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use pipesim_core::graph::{ComputationGraph, MapSemantics, NodeKind};
use pipesim_core::nn::{softmax_ce, Activation, Layer, Params, Tensor};
use pipesim_core::pipeline::{Batch, EpochSummary};
use pipesim_core::StagePartition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `2 ×` the number of stages after each layer's stage, counted from the
/// stage sizes alone.
pub fn closed_form_delays(p: &StagePartition) -> Vec<usize> {
    let sizes = p.sizes();
    let stages = sizes.len();
    let mut out = Vec::new();
    for (stage, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            out.push(2 * (stages - 1 - stage));
        }
    }
    out
}

/// Random zero-preserving wrapping-integer semantics: every pure node is a
/// random linear form of its inputs plus a product of the first two, and
/// every register accumulates a linear form of its inputs.
pub fn random_semantics(g: &ComputationGraph, seed: u64) -> MapSemantics<i64> {
    let mut r = rng(seed);
    let mut sem = MapSemantics::default();
    for node in &g.nodes {
        let id = node.id;
        let coef: Vec<i64> = (0..8).map(|_| r.gen_range(-5..=5)).collect();
        let mix = r.gen_range(0..=3);
        match node.kind {
            NodeKind::Input => {}
            NodeKind::Output => {
                sem.bind(id, |xs: &[i64]| xs[0]);
            }
            k if k.is_register() => {
                let decay = r.gen_range(-2..=2);
                sem.bind_register(id, move |s: &i64, xs: &[i64]| {
                    xs.iter()
                        .zip(&coef)
                        .fold(s.wrapping_mul(decay), |acc, (x, c)| acc.wrapping_add(x.wrapping_mul(*c)))
                });
            }
            _ => {
                sem.bind(id, move |xs: &[i64]| {
                    let lin = xs
                        .iter()
                        .zip(&coef)
                        .fold(0i64, |acc, (x, c)| acc.wrapping_add(x.wrapping_mul(*c)));
                    let prod = if xs.len() > 1 { xs[0].wrapping_mul(xs[1]) } else { 0 };
                    lin.wrapping_add(prod.wrapping_mul(mix))
                });
            }
        }
    }
    sem
}

/// Arithmetic mean of the first `n` tensors, summed in order.
pub fn prefix_mean(gs: &[Tensor], n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; gs[0].len()];
    for g in &gs[..n] {
        for (a, v) in acc.iter_mut().zip(g.data()) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / n as f64).collect()
}

/// Naive triple loop `y = act(x Wᵀ + b)`.
pub fn naive_forward(p: &Params, act: Activation, x: &Tensor) -> Vec<f64> {
    let (n, i_dim, o_dim) = (x.rows(), x.cols(), p.w.rows());
    let mut y = vec![0.0; n * o_dim];
    for r in 0..n {
        for o in 0..o_dim {
            let mut s = p.b.data()[o];
            for i in 0..i_dim {
                s += x.at(r, i) * p.w.at(o, i);
            }
            y[r * o_dim + o] = match act {
                Activation::Relu => s.max(0.0),
                Activation::Identity => s,
            };
        }
    }
    y
}

/// Loss of a layer stack followed by softmax cross-entropy.
pub fn stack_loss(layers: &[Layer], x: &Tensor, y: &[usize]) -> f64 {
    let mut h = x.clone();
    for l in layers {
        h = l.forward(&h).unwrap().0;
    }
    softmax_ce(&h, y).unwrap().0
}

/// Central finite difference of `f` at `x` with step `eps`.
pub fn central_difference(x: f64, eps: f64, f: impl Fn(f64) -> f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

/// Random labelled microbatches.
pub fn random_stream(seed: u64, count: usize, batch: usize, dim: usize, classes: usize) -> Vec<Batch> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| Batch {
            x: random_tensor(&mut r, &[batch, dim], 1.0),
            y: (0..batch).map(|_| r.gen_range(0..classes)).collect(),
        })
        .collect()
}

pub fn no_hook() -> impl FnMut(&EpochSummary, &pipesim_core::nn::Mlp) -> pipesim_core::Result<()> {
    |_, _| Ok(())
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

pub fn params_bits(p: &Params) -> (Vec<u64>, Vec<u64>) {
    (bits(&p.w), bits(&p.b))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}
