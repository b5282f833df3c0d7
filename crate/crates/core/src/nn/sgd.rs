use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerGrads, Params};
use crate::error::{Error, Result};

/// Spacing of the parameter lattice. Parameters and applied updates are
/// multiples of it, so adding or subtracting an update is exact in `f64` as
/// long as magnitudes stay below [`PARAM_LIMIT`].
pub const PARAM_QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

/// Parameters at or beyond this magnitude are treated as divergence.
pub const PARAM_LIMIT: f64 = 4096.0;

/// Rounds to the nearest point of the parameter lattice. Never returns
/// negative zero, so undoing an update restores the exact bit pattern.
pub fn quantize(v: f64) -> f64 {
    (v / PARAM_QUANTUM).round() * PARAM_QUANTUM + 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LrSchedule {
    Constant,
    Cosine { t_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "constant")]
    pub schedule: LrSchedule,
}

fn constant() -> LrSchedule {
    LrSchedule::Constant
}

impl SgdConfig {
    pub fn plain(lr: f64) -> Self {
        Self {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be nonnegative, got {}", self.weight_decay)));
        }
        if let LrSchedule::Cosine { t_max: 0 } = self.schedule {
            return Err(Error::Config("cosine schedule needs t_max > 0".into()));
        }
        Ok(())
    }

    pub fn is_plain(&self) -> bool {
        self.momentum == 0.0 && self.weight_decay == 0.0
    }

    /// Learning rate at iteration `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine { t_max } => {
                let frac = t.min(t_max) as f64 / t_max as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Momentum buffers for one layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    velocity: Option<Params>,
}

/// Applies one SGD step to `layer` and returns the update that was added to
/// its parameters.
pub fn sgd_step(layer: &mut Layer, state: &mut SgdState, grads: &LayerGrads, cfg: &SgdConfig, t: usize) -> Result<Params> {
    let p = &layer.params;
    p.w.same_shape(&grads.dw)?;
    p.b.same_shape(&grads.db)?;
    if !grads.dw.is_finite() || !grads.db.is_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    let alpha = cfg.lr_at(t);
    let (gw, gb) = if cfg.is_plain() {
        (grads.dw.clone(), grads.db.clone())
    } else {
        let mut gw = grads.dw.clone();
        gw.axpy(cfg.weight_decay, &p.w)?;
        let mut gb = grads.db.clone();
        gb.axpy(cfg.weight_decay, &p.b)?;
        let v = state.velocity.get_or_insert_with(|| p.zeros_like());
        v.w = v.w.scale(cfg.momentum).add(&gw)?;
        v.b = v.b.scale(cfg.momentum).add(&gb)?;
        (v.w.clone(), v.b.clone())
    };
    let update = Params {
        w: gw.map(|g| quantize(-alpha * g)),
        b: gb.map(|g| quantize(-alpha * g)),
    };
    apply_update(layer, &update)?;
    Ok(update)
}

/// Adds a lattice-aligned update to the layer's parameters.
pub fn apply_update(layer: &mut Layer, update: &Params) -> Result<()> {
    let w = layer.params.w.add(&update.w)?;
    let b = layer.params.b.add(&update.b)?;
    let m = w.max_abs().max(b.max_abs());
    if !m.is_finite() || m >= PARAM_LIMIT {
        return Err(Error::Diverged(format!("parameter magnitude {m:e} exceeds {PARAM_LIMIT}")));
    }
    layer.params = Params { w, b };
    Ok(())
}

/// Rounds every parameter onto the lattice.
pub fn quantize_params(p: &Params) -> Params {
    Params {
        w: p.w.map(quantize),
        b: p.b.map(quantize),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::Activation;
    use crate::nn::Tensor;

    fn ones_layer() -> Layer {
        Layer::new(Tensor::full(&[2, 3], 1.0), Tensor::zeros(&[2]), Activation::Relu).unwrap()
    }

    fn ones_grads() -> LayerGrads {
        LayerGrads {
            dw: Tensor::full(&[2, 3], 1.0),
            db: Tensor::full(&[2], 1.0),
            dx: Tensor::zeros(&[1, 3]),
        }
    }

    #[test]
    fn plain_step_subtracts_lr_times_grad() {
        let mut l = ones_layer();
        let u = sgd_step(&mut l, &mut SgdState::default(), &ones_grads(), &SgdConfig::plain(1.0), 0).unwrap();
        assert!(l.params.w.data().iter().all(|&v| v == 0.0));
        assert!(u.w.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn momentum_second_step() {
        let cfg = SgdConfig {
            momentum: 0.9,
            ..SgdConfig::plain(0.125)
        };
        let mut l = ones_layer();
        let mut st = SgdState::default();
        sgd_step(&mut l, &mut st, &ones_grads(), &cfg, 0).unwrap();
        let u = sgd_step(&mut l, &mut st, &ones_grads(), &cfg, 1).unwrap();
        for &v in u.w.data() {
            assert!((v + 0.125 * 1.9).abs() <= PARAM_QUANTUM);
        }
    }

    #[test]
    fn cosine_endpoints() {
        let cfg = SgdConfig {
            schedule: LrSchedule::Cosine { t_max: 100 },
            ..SgdConfig::plain(0.1)
        };
        assert_eq!(cfg.lr_at(0), 0.1);
        assert!(cfg.lr_at(100).abs() < 1e-12);
        assert!(cfg.lr_at(500).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let mut l = ones_layer();
        let mut g = ones_grads();
        g.dw = Tensor::full(&[2, 3], 1e6);
        let err = sgd_step(&mut l, &mut SgdState::default(), &g, &SgdConfig::plain(1.0), 0).unwrap_err();
        assert!(matches!(err, Error::Diverged(_)));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SgdConfig::plain(0.0).validate().is_err());
        assert!(SgdConfig { momentum: 1.0, ..SgdConfig::plain(0.1) }.validate().is_err());
        assert!(SgdConfig { weight_decay: -1.0, ..SgdConfig::plain(0.1) }.validate().is_err());
    }
}
