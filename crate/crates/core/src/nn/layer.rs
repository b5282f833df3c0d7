use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Weights (`out × in`) and bias (`out`) of a dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub w: Tensor,
    pub b: Tensor,
}

impl Params {
    pub fn nbytes(&self) -> usize {
        self.w.nbytes() + self.b.nbytes()
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            w: Tensor::zeros(self.w.shape()),
            b: Tensor::zeros(self.b.shape()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub params: Params,
    pub activation: Activation,
}

/// What the backward pass needs from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub x: Tensor,
    pub pre: Tensor,
}

impl ForwardCache {
    pub fn nbytes(&self) -> usize {
        self.x.nbytes() + self.pre.nbytes()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dw: Tensor,
    pub db: Tensor,
    pub dx: Tensor,
}

impl Layer {
    pub fn new(w: Tensor, b: Tensor, activation: Activation) -> Result<Self> {
        if w.shape().len() != 2 || b.shape() != [w.rows()] {
            return Err(Error::Shape(format!(
                "weights {:?} and bias {:?} do not form a dense layer",
                w.shape(),
                b.shape()
            )));
        }
        Ok(Self {
            params: Params { w, b },
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.params.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.params.w.rows()
    }

    /// `y = act(x Wᵀ + b)` for a batch `x` of shape `batch × in`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        forward_with(&self.params, self.activation, x)
    }

    pub fn backward(&self, cache: &ForwardCache, dy: &Tensor) -> Result<LayerGrads> {
        backward_with(&self.params.w, self.activation, cache, dy)
    }
}

/// Forward pass through a dense layer with the given parameters.
pub fn forward_with(p: &Params, activation: Activation, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
    let (out, inp) = (p.w.rows(), p.w.cols());
    if x.shape().len() != 2 || x.cols() != inp {
        return Err(Error::Shape(format!("input {:?} does not fit layer {inp}→{out}", x.shape())));
    }
    let mut pre = x.matmul_t(&p.w)?;
    let b = p.b.data();
    for (i, v) in pre.data_mut().iter_mut().enumerate() {
        *v += b[i % out];
    }
    let y = match activation {
        Activation::Relu => pre.map(|v| v.max(0.0)),
        Activation::Identity => pre.clone(),
    };
    Ok((y, ForwardCache { x: x.clone(), pre }))
}

/// Chain rule through a dense layer using weights `w`, which may be an older
/// or reconstructed version rather than the layer's current weights.
pub fn backward_with(w: &Tensor, activation: Activation, cache: &ForwardCache, dy: &Tensor) -> Result<LayerGrads> {
    if cache.x.cols() != w.cols() || cache.pre.cols() != w.rows() || cache.x.rows() != cache.pre.rows() {
        return Err(Error::StaleCache(format!(
            "cache (x {:?}, pre {:?}) does not belong to weights {:?}",
            cache.x.shape(),
            cache.pre.shape(),
            w.shape()
        )));
    }
    if dy.shape() != cache.pre.shape() {
        return Err(Error::Shape(format!(
            "output gradient {:?} vs pre-activation {:?}",
            dy.shape(),
            cache.pre.shape()
        )));
    }
    let dpre = match activation {
        Activation::Relu => dy.zip_map(&cache.pre, |g, p| if p > 0.0 { g } else { 0.0 })?,
        Activation::Identity => dy.clone(),
    };
    Ok(LayerGrads {
        dw: dpre.t_matmul(&cache.x)?,
        db: dpre.sum_rows(),
        dx: dpre.matmul(w)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: &[Vec<f64>], b: &[f64], act: Activation) -> Layer {
        Layer::new(Tensor::from_rows(w).unwrap(), Tensor::vector(b.to_vec()).unwrap(), act).unwrap()
    }

    #[test]
    fn identity_layer_passes_input() {
        let l = layer(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0], Activation::Identity);
        let x = Tensor::from_rows(&[vec![3.0, -2.0]]).unwrap();
        assert_eq!(l.forward(&x).unwrap().0, x);
    }

    #[test]
    fn relu_clamps_negative() {
        let l = layer(&[vec![1.0], vec![-1.0]], &[0.0, -5.0], Activation::Relu);
        let x = Tensor::from_rows(&[vec![2.0]]).unwrap();
        assert_eq!(l.forward(&x).unwrap().0.data(), &[2.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gradient() {
        let l = layer(&[vec![1.0, 2.0]], &[0.5], Activation::Relu);
        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let (_, cache) = l.forward(&x).unwrap();
        let g = l.backward(&cache, &Tensor::zeros(&[1, 1])).unwrap();
        assert_eq!(g.dw.max_abs() + g.db.max_abs() + g.dx.max_abs(), 0.0);
    }

    #[test]
    fn scalar_chain_rule() {
        let l = layer(&[vec![2.0]], &[0.0], Activation::Identity);
        let x = Tensor::from_rows(&[vec![3.0]]).unwrap();
        let (_, cache) = l.forward(&x).unwrap();
        let g = l.backward(&cache, &Tensor::from_rows(&[vec![0.5]]).unwrap()).unwrap();
        assert_eq!(g.dw.data(), &[1.5]);
        assert_eq!(g.db.data(), &[0.5]);
        assert_eq!(g.dx.data(), &[1.0]);
    }

    #[test]
    fn shape_errors() {
        let l = layer(&[vec![1.0, 2.0]], &[0.0], Activation::Relu);
        assert!(matches!(l.forward(&Tensor::zeros(&[1, 3])), Err(Error::Shape(_))));
        let (_, cache) = l.forward(&Tensor::zeros(&[1, 2])).unwrap();
        assert!(matches!(l.backward(&cache, &Tensor::zeros(&[2, 1])), Err(Error::Shape(_))));
        let other = layer(&[vec![1.0, 2.0, 3.0]], &[0.0], Activation::Relu);
        assert!(matches!(other.backward(&cache, &Tensor::zeros(&[1, 1])), Err(Error::StaleCache(_))));
    }
}
