//! First-order optimizers: plain SGD and bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    /// Default learning rate for each kind.
    pub fn default_lr(self) -> f64 {
        match self {
            OptimizerKind::Sgd => 0.01,
            OptimizerKind::Adam => 0.001,
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::adam(lr)
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("adam betas must lie in [0, 1) and epsilon be positive".into()));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(OptimizerKind::Adam.default_lr())
    }
}

/// Optimizer state: configuration, step counter, and Adam moments per
/// parameter (allocated on the first step).
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place from `grads` (same order, same shapes).
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer_step", (params.len(), 1), (grads.len(), 1)));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer_step", p.shape(), g.shape()));
            }
        }
        if self.config.kind == OptimizerKind::Adam {
            if self.m.is_empty() {
                self.m = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
                self.v = self.m.clone();
            } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.shape() != g.shape()) {
                return Err(Error::Invariant("parameter set changed between optimizer steps".into()));
            }
        }

        self.step += 1;
        let lr = self.config.lr;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * gv;
                    }
                    check_finite(p)?;
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig { beta1, beta2, epsilon, .. } = self.config;
                let t = self.step as i32;
                let inv_bc1 = 1.0 / (1.0 - beta1.powi(t));
                let inv_bc2 = 1.0 / (1.0 - beta2.powi(t));
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
                    for (((w, &gv), mi), vi) in pd.iter_mut().zip(g.data()).zip(md.iter_mut()).zip(vd.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gv;
                        *vi = beta2 * *vi + (1.0 - beta2) * gv * gv;
                        *w -= lr * (*mi * inv_bc1) / ((*vi * inv_bc2).sqrt() + epsilon);
                    }
                    check_finite(p)?;
                }
            }
        }
        Ok(())
    }
}

fn check_finite(t: &Tensor) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("optimizer_step"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(config: OptimizerConfig, w: f64, g: f64) -> f64 {
        let mut opt = Optimizer::new(config).unwrap();
        let mut p = Tensor::scalar(w).unwrap();
        opt.step(&mut [&mut p], &[Tensor::scalar(g).unwrap()]).unwrap();
        p.item().unwrap()
    }

    #[test]
    fn sgd_hand_step() {
        assert!((step_once(OptimizerConfig::sgd(0.1), 1.0, 0.5) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_params() {
        assert_eq!(step_once(OptimizerConfig::sgd(0.0), 1.25, 3.0), 1.25);
        assert_eq!(step_once(OptimizerConfig::adam(0.0), 1.25, 3.0), 1.25);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        for g in [1e-3, 0.5, -7.0, 100.0] {
            let delta = step_once(OptimizerConfig::adam(0.01), 2.0, g) - 2.0;
            assert!((delta.abs() - 0.01).abs() <= 0.001, "g={g} delta={delta}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn step_counter_and_moment_shapes() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01)).unwrap();
        let mut a = Tensor::ones(2, 3);
        let mut b = Tensor::ones(1, 4);
        for expected in 1..=3 {
            opt.step(&mut [&mut a, &mut b], &[Tensor::ones(2, 3), Tensor::ones(1, 4)]).unwrap();
            assert_eq!(opt.steps(), expected);
        }
        assert_eq!(opt.m[0].shape(), (2, 3));
        assert_eq!(opt.v[1].shape(), (1, 4));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap();
        let mut a = Tensor::ones(2, 2);
        let err = opt.step(&mut [&mut a], &[Tensor::ones(2, 3)]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
