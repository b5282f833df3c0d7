use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{Activation, ForwardCache, Layer};
use super::loss::correct;
use super::sgd::quantize;
use super::{softmax_ce, Tensor};
use crate::error::{Error, Result};

/// Stack of dense layers: ReLU everywhere except the identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// He-uniform initialization on the parameter lattice with zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::NoLayers);
        }
        if sizes.contains(&0) {
            return Err(Error::Shape(format!("layer sizes {sizes:?} contain zero")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (i, o) = (sizes[l], sizes[l + 1]);
                let bound = (6.0 / i as f64).sqrt();
                let w: Vec<f64> = (0..i * o).map(|_| quantize(rng.gen_range(-bound..bound))).collect();
                let act = if l + 1 == n { Activation::Identity } else { Activation::Relu };
                Layer::new(Tensor::new(vec![o, i], w).unwrap(), Tensor::zeros(&[o]), act)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].in_dim()];
        s.extend(self.layers.iter().map(Layer::out_dim));
        s
    }

    pub fn param_bytes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.params.nbytes()).collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<ForwardCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    /// Mean loss and accuracy over a labelled set.
    pub fn evaluate(&self, x: &Tensor, y: &[usize]) -> Result<(f64, f64)> {
        let logits = self.logits(x)?;
        let (loss, _) = softmax_ce(&logits, y)?;
        Ok((loss, correct(&logits, y) as f64 / y.len() as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::sgd::PARAM_QUANTUM;

    #[test]
    fn seeded_init_is_deterministic_and_on_lattice() {
        let a = Mlp::new(&[2, 8, 3], 7).unwrap();
        assert_eq!(a, Mlp::new(&[2, 8, 3], 7).unwrap());
        assert_ne!(a, Mlp::new(&[2, 8, 3], 8).unwrap());
        for l in &a.layers {
            for &v in l.params.w.data() {
                assert_eq!((v / PARAM_QUANTUM).fract(), 0.0);
            }
        }
        assert_eq!(a.sizes(), vec![2, 8, 3]);
        assert_eq!(a.layers[1].activation, Activation::Identity);
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(Mlp::new(&[4], 0).is_err());
        assert!(Mlp::new(&[4, 0, 2], 0).is_err());
    }
}
