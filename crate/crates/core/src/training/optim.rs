use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::GradientMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` at round 0 towards zero at the horizon.
    Cosine,
    /// Multiply by `factor` from `epoch` onwards.
    StepDecay { factor: f64, epoch: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: Schedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Schedule::Constant,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be nonnegative, got {}", self.weight_decay)));
        }
        if let Schedule::StepDecay { factor, .. } = self.schedule {
            if !(factor > 0.0) {
                return Err(Error::Config(format!("decay factor must be positive, got {factor}")));
            }
        }
        Ok(())
    }

    /// Learning rate `γ_t` for round `t` of `horizon` rounds.
    pub fn lr_at(&self, t: usize, rounds_per_epoch: usize, horizon: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let frac = t as f64 / horizon.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            Schedule::StepDecay { factor, epoch } => {
                if t / rounds_per_epoch.max(1) >= epoch {
                    self.lr * factor
                } else {
                    self.lr
                }
            }
        }
    }
}

/// Momentum buffers, one per parameter layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<GradientMatrix>,
}

impl OptimizerState {
    pub fn new(params: &[GradientMatrix]) -> Self {
        Self {
            velocity: params.iter().map(|p| GradientMatrix::zeros(p.rows(), p.cols())).collect(),
        }
    }
}

/// `v ← μ·v + g + wd·θ; θ ← θ − γ·v` layer by layer.
pub fn optimizer_step(
    config: &OptimizerConfig,
    state: &mut OptimizerState,
    params: &mut [GradientMatrix],
    grads: &[GradientMatrix],
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::InvalidArgument("parameter, gradient and state layer counts differ".into()));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        g.ensure_shape(p.shape())?;
        v.ensure_shape(p.shape())?;
        v.scale_mut(config.momentum);
        v.axpy(1.0, g);
        if config.weight_decay != 0.0 {
            v.axpy(config.weight_decay, p);
        }
        p.axpy(-lr, v);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<GradientMatrix> {
        vec![GradientMatrix::from_vec(1, 1, vec![v]).unwrap()]
    }

    #[test]
    fn plain_sgd() {
        let cfg = OptimizerConfig::sgd(0.5);
        let mut p = one(1.0);
        let mut s = OptimizerState::new(&p);
        optimizer_step(&cfg, &mut s, &mut p, &one(2.0), 0.5).unwrap();
        assert_eq!(p[0].as_slice(), &[0.0]);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let cfg = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = one(3.0);
        let mut s = OptimizerState::new(&p);
        optimizer_step(&cfg, &mut s, &mut p, &one(0.0), 0.1).unwrap();
        assert_eq!(p[0].as_slice(), &[3.0]);
    }

    #[test]
    fn two_momentum_steps() {
        let cfg = OptimizerConfig { lr: 1.0, momentum: 0.9, weight_decay: 0.0, schedule: Schedule::Constant };
        let mut p = one(0.0);
        let mut s = OptimizerState::new(&p);
        for _ in 0..2 {
            optimizer_step(&cfg, &mut s, &mut p, &one(1.0), 1.0).unwrap();
        }
        assert!((p[0].as_slice()[0] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn schedules_are_positive() {
        let cos = OptimizerConfig { schedule: Schedule::Cosine, ..Default::default() };
        assert_eq!(cos.lr_at(0, 10, 100), 0.01);
        assert!(cos.lr_at(99, 10, 100) > 0.0);
        let step = OptimizerConfig { schedule: Schedule::StepDecay { factor: 0.1, epoch: 150 }, ..Default::default() };
        assert_eq!(step.lr_at(1499, 10, 3000), 0.01);
        assert!((step.lr_at(1500, 10, 3000) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        assert!(OptimizerConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig::sgd(0.0).validate().is_err());
    }
}
