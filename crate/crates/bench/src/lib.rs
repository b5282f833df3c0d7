//! Shared fixtures for the benchmarks.

use pipesim_core::nn::{Mlp, Tensor};
use pipesim_core::pipeline::Batch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` random microbatches of `batch` rows in `dim` dimensions.
pub fn random_batches(seed: u64, count: usize, batch: usize, dim: usize, classes: usize) -> Vec<Batch> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Batch {
            x: Tensor::new(vec![batch, dim], (0..batch * dim).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap(),
            y: (0..batch).map(|_| r.gen_range(0..classes)).collect(),
        })
        .collect()
}

/// MLP with `layers` dense layers of width `width` between `dim` inputs and
/// `classes` outputs.
pub fn mlp(layers: usize, dim: usize, width: usize, classes: usize) -> Mlp {
    let mut sizes = vec![dim];
    sizes.extend(std::iter::repeat_n(width, layers - 1));
    sizes.push(classes);
    Mlp::new(&sizes, 0).unwrap()
}
