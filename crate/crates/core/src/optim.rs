//! SGD with momentum and coupled weight decay, and bias-corrected Adam.
//!
//! Optimizer state is kept in `f64`, one buffer per parameter in the
//! model's canonical parameter order, allocated on the first step.

use crate::error::{Error, Result};
use crate::nn::{Param, ParamRole, Sequential};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Apply weight decay to biases and norm affines too.
    pub decay_all: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_all: false,
        }
    }
}

impl SgdConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("sgd lr {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("sgd momentum {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sgd weight decay {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub decay_all: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay_all: false,
        }
    }
}

impl AdamConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("adam lr {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("adam {name} {b}")));
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("adam eps/weight decay".into()));
        }
        Ok(())
    }
}

fn decays(p: &Param, decay_all: bool) -> bool {
    decay_all || p.role == ParamRole::Weight
}

fn bind_state(state: &mut Vec<Vec<f64>>, params: &[(String, &mut Param)]) -> Result<()> {
    if state.is_empty() {
        *state = params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
    }
    if state.len() != params.len()
        || state
            .iter()
            .zip(params)
            .any(|(s, (_, p))| s.len() != p.value.numel())
    {
        return Err(Error::shape("optimizer", "bound to a different model"));
    }
    Ok(())
}

fn require_grads(params: &[(String, &mut Param)]) -> Result<()> {
    match params.iter().find(|(_, p)| p.grad.is_none()) {
        Some((name, _)) => Err(Error::MissingGrad(name.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub cfg: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sgd {
            cfg,
            velocity: Vec::new(),
        })
    }

    /// `g' = g + wd*w; v = momentum*v + g'; w -= lr*v`.
    pub fn step(&mut self, model: &mut Sequential) -> Result<()> {
        let mut params = model.named_params_mut();
        require_grads(&params)?;
        bind_state(&mut self.velocity, &params)?;
        let c = self.cfg;
        for ((_, p), vel) in params.iter_mut().zip(&mut self.velocity) {
            let wd = if decays(p, c.decay_all) { c.weight_decay as f64 } else { 0.0 };
            let g = p.grad.as_ref().expect("checked").data();
            for ((w, &g), v) in p.value.data_mut().iter_mut().zip(g).zip(vel.iter_mut()) {
                let g = g as f64 + wd * *w as f64;
                *v = c.momentum as f64 * *v + g;
                *w -= (c.lr as f64 * *v) as f32;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers of parameter `i`.
    pub fn moments(&self, i: usize) -> Option<(&[f64], &[f64])> {
        Some((self.m.get(i)?, self.v.get(i)?))
    }

    pub fn step(&mut self, model: &mut Sequential) -> Result<()> {
        let mut params = model.named_params_mut();
        require_grads(&params)?;
        bind_state(&mut self.m, &params)?;
        bind_state(&mut self.v, &params)?;
        self.step += 1;
        let c = self.cfg;
        let (b1, b2) = (c.beta1 as f64, c.beta2 as f64);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (((_, p), m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let wd = if decays(p, c.decay_all) { c.weight_decay as f64 } else { 0.0 };
            let g = p.grad.as_ref().expect("checked").data();
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g as f64 + wd * *w as f64;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = c.lr as f64 * (*m / bc1) / ((*v / bc2).sqrt() + c.eps as f64);
                *w -= update as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    /// A 1 -> 1 dense model whose weight is `w` and bias `b`.
    fn scalar_model(w: f32, b: f32) -> Sequential {
        let mut layer = Layer::dense(1, 1, &mut Rng::new(0)).unwrap();
        if let Layer::Dense { weight, bias } = &mut layer {
            weight.value = Tensor::new(vec![1, 1], vec![w]).unwrap();
            bias.value = Tensor::new(vec![1], vec![b]).unwrap();
        }
        Sequential::new(vec![layer], &[1], 0).unwrap()
    }

    fn set_grads(m: &mut Sequential, gw: f32, gb: f32) {
        let mut ps = m.params_mut();
        ps[0].grad = Some(Tensor::new(vec![1, 1], vec![gw]).unwrap());
        ps[1].grad = Some(Tensor::new(vec![1], vec![gb]).unwrap());
    }

    fn weight(m: &Sequential) -> f32 {
        m.named_params()[0].1.value.data()[0]
    }

    #[test]
    fn vanilla_sgd_step() {
        let mut m = scalar_model(1.0, 0.0);
        let mut opt = Sgd::new(SgdConfig {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            decay_all: false,
        })
        .unwrap();
        set_grads(&mut m, 1.0, 0.0);
        opt.step(&mut m).unwrap();
        assert_eq!(weight(&m), 0.9);
    }

    #[test]
    fn momentum_recurrence() {
        let mut m = scalar_model(0.0, 0.0);
        let mut opt = Sgd::new(SgdConfig {
            lr: 1.0,
            momentum: 0.9,
            weight_decay: 0.0,
            decay_all: false,
        })
        .unwrap();
        set_grads(&mut m, 1.0, 0.0);
        opt.step(&mut m).unwrap();
        assert!((weight(&m) - -1.0).abs() < 1e-6);
        opt.step(&mut m).unwrap();
        assert!((weight(&m) - -2.9).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_shrinks_weights_only() {
        let mut m = scalar_model(2.0, 2.0);
        let cfg = SgdConfig {
            lr: 0.5,
            momentum: 0.0,
            weight_decay: 1e-4,
            decay_all: false,
        };
        let mut opt = Sgd::new(cfg).unwrap();
        set_grads(&mut m, 0.0, 0.0);
        opt.step(&mut m).unwrap();
        assert!((weight(&m) - (2.0 - 0.5 * 1e-4 * 2.0)).abs() < 1e-7);
        assert_eq!(m.named_params()[1].1.value.data()[0], 2.0);
    }

    #[test]
    fn zero_lr_is_bitwise_noop() {
        let mut m = scalar_model(0.123_456_7, -3.5);
        let before = m.state();
        let mut opt = Sgd::new(SgdConfig {
            lr: 0.0,
            ..SgdConfig::default()
        })
        .unwrap();
        set_grads(&mut m, 5.0, -2.0);
        opt.step(&mut m).unwrap();
        assert_eq!(m.state(), before);
    }

    #[test]
    fn missing_grad_errors() {
        let mut m = scalar_model(1.0, 0.0);
        let mut opt = Sgd::new(SgdConfig::default()).unwrap();
        assert!(matches!(opt.step(&mut m), Err(Error::MissingGrad(n)) if n == "layer0.weight"));
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        assert!(matches!(adam.step(&mut m), Err(Error::MissingGrad(_))));
    }

    #[test]
    fn sgd_decreases_quadratic() {
        // loss = w^2 / 2, grad = w
        for lr in [0.01f32, 0.3, 0.9] {
            let mut m = scalar_model(1.7, 0.0);
            let mut opt = Sgd::new(SgdConfig {
                lr,
                momentum: 0.9,
                weight_decay: 0.0,
                decay_all: false,
            })
            .unwrap();
            let w0 = weight(&m);
            set_grads(&mut m, w0, 0.0);
            opt.step(&mut m).unwrap();
            let w1 = weight(&m);
            assert!(w1 * w1 / 2.0 < w0 * w0 / 2.0, "lr {lr}");
        }
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut m = scalar_model(1.0, 0.0);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        set_grads(&mut m, 1.0, 0.0);
        opt.step(&mut m).unwrap();
        let delta = weight(&m) - 1.0;
        assert!((delta + 2e-4).abs() < 1e-7, "{delta}");
    }

    #[test]
    fn adam_zero_grad_keeps_weights() {
        let mut m = scalar_model(0.75, 0.25);
        let before = m.state();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        for _ in 0..10 {
            set_grads(&mut m, 0.0, 0.0);
            opt.step(&mut m).unwrap();
        }
        assert_eq!(m.state(), before);
    }

    #[test]
    fn adam_scale_invariant_first_step() {
        let run = |g: f32| {
            let mut m = scalar_model(1.0, 0.0);
            let mut opt = Adam::new(AdamConfig::default()).unwrap();
            set_grads(&mut m, g, 0.0);
            opt.step(&mut m).unwrap();
            (weight(&m) - 1.0) as f64
        };
        let (a, b) = (run(0.3), run(3.0));
        assert!(((a - b) / a).abs() < 1e-6);
    }

    #[test]
    fn adam_moments_match_scalar_reference() {
        let cfg = AdamConfig::default();
        let mut m = scalar_model(0.5, 0.0);
        let mut opt = Adam::new(cfg).unwrap();
        let (mut rm, mut rv) = (0.0f64, 0.0f64);
        let mut rng = Rng::new(17);
        for _ in 0..100 {
            let g = rng.normal();
            set_grads(&mut m, g, 0.0);
            opt.step(&mut m).unwrap();
            rm = cfg.beta1 as f64 * rm + (1.0 - cfg.beta1 as f64) * g as f64;
            rv = cfg.beta2 as f64 * rv + (1.0 - cfg.beta2 as f64) * (g as f64).powi(2);
            let (m1, v1) = opt.moments(0).unwrap();
            assert!((m1[0] - rm).abs() < 1e-7);
            assert!((v1[0] - rv).abs() < 1e-7);
        }
        assert_eq!(opt.steps(), 100);
    }

    #[test]
    fn config_validation() {
        assert!(Sgd::new(SgdConfig {
            momentum: 1.0,
            ..SgdConfig::default()
        })
        .is_err());
        assert!(Adam::new(AdamConfig {
            beta2: 1.0,
            ..AdamConfig::default()
        })
        .is_err());
    }
}
