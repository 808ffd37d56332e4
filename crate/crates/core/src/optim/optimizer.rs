//! First-order update rules, selectable by name.

use std::fmt;
use std::str::FromStr;

use crate::tensor::{Tensor, TensorError};

use super::OptimError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// Cosine annealing from the base rate towards zero, restarting every
    /// `period` epochs.
    CosineWarmRestart { period: usize },
}

impl Schedule {
    /// Learning rate at `epoch` (0-based). Always positive for a positive base.
    pub fn lr(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            Schedule::Constant => base,
            Schedule::CosineWarmRestart { period } => {
                let t = (epoch % period) as f64 / period as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant => f.write_str("constant"),
            Schedule::CosineWarmRestart { period } => write!(f, "cosine:{period}"),
        }
    }
}

impl FromStr for Schedule {
    type Err = OptimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "constant" {
            return Ok(Schedule::Constant);
        }
        if let Some(p) = s.strip_prefix("cosine:") {
            let period: usize = p
                .parse()
                .map_err(|_| OptimError::InvalidConfig(format!("bad restart period `{p}`")))?;
            if period == 0 {
                return Err(OptimError::InvalidConfig("restart period must be positive".into()));
            }
            return Ok(Schedule::CosineWarmRestart { period });
        }
        Err(OptimError::InvalidConfig(format!("unknown schedule `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: String,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            algorithm: "sgd".into(),
            lr,
            ..Self::default()
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            algorithm: "adamw".into(),
            lr,
            weight_decay,
            ..Self::default()
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: "sgd".into(),
            lr: 0.05,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// An update rule with per-parameter state. Parameters are addressed by their
/// position in the slices passed to [`Optimizer::step`], which must be stable
/// across calls.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64)
        -> Result<(), OptimError>;
}

/// Builds a fresh [`Optimizer`] from a config.
pub trait OptimizerKind: Sync {
    fn name(&self) -> &'static str;
    fn build(&self, config: &OptimizerConfig) -> Box<dyn Optimizer>;
}

fn check_shapes(params: &[&mut Tensor], grads: &[&Tensor]) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::InvalidConfig(format!(
            "{} params but {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            }
            .into());
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct Sgd {
    weight_decay: f64,
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        lr: f64,
    ) -> Result<(), OptimError> {
        check_shapes(params, grads)?;
        for (p, g) in params.iter_mut().zip(grads) {
            for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                *x -= lr * (d + self.weight_decay * *x);
            }
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Debug)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: Vec<u32>,
}

impl AdamW {
    pub fn new(config: &OptimizerConfig) -> Self {
        Self {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            first: Vec::new(),
            second: Vec::new(),
            steps: Vec::new(),
        }
    }

    pub fn step_count(&self, slot: usize) -> u32 {
        self.steps.get(slot).copied().unwrap_or(0)
    }
}

impl Optimizer for AdamW {
    fn name(&self) -> &'static str {
        "adamw"
    }

    fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        lr: f64,
    ) -> Result<(), OptimError> {
        check_shapes(params, grads)?;
        while self.first.len() < params.len() {
            let len = params[self.first.len()].len();
            self.first.push(vec![0.0; len]);
            self.second.push(vec![0.0; len]);
            self.steps.push(0);
        }
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if self.first[slot].len() != p.len() {
                return Err(OptimError::InvalidConfig(format!(
                    "parameter {slot} changed size"
                )));
            }
            self.steps[slot] += 1;
            let t = self.steps[slot] as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            for (i, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                *x *= 1.0 - lr * self.weight_decay;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * d;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * d * d;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

struct SgdKind;
struct AdamWKind;

impl OptimizerKind for SgdKind {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn build(&self, config: &OptimizerConfig) -> Box<dyn Optimizer> {
        Box::new(Sgd {
            weight_decay: config.weight_decay,
        })
    }
}

impl OptimizerKind for AdamWKind {
    fn name(&self) -> &'static str {
        "adamw"
    }

    fn build(&self, config: &OptimizerConfig) -> Box<dyn Optimizer> {
        Box::new(AdamW::new(config))
    }
}

static OPTIMIZERS: [&dyn OptimizerKind; 2] = [&SgdKind, &AdamWKind];

pub fn optimizers() -> &'static [&'static dyn OptimizerKind] {
    &OPTIMIZERS
}

pub fn optimizer(name: &str) -> Result<&'static dyn OptimizerKind, OptimError> {
    OPTIMIZERS
        .iter()
        .copied()
        .find(|k| k.name() == name)
        .ok_or_else(|| OptimError::InvalidConfig(format!("unknown optimizer `{name}`")))
}

/// An optimizer plus its schedule and epoch counter.
pub struct OptimizerState {
    pub config: OptimizerConfig,
    inner: Box<dyn Optimizer>,
    epoch: usize,
}

impl fmt::Debug for OptimizerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OptimizerState")
            .field("algorithm", &self.inner.name())
            .field("epoch", &self.epoch)
            .finish()
    }
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig) -> Result<Self, OptimError> {
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        if config.weight_decay < 0.0 {
            return Err(OptimError::InvalidConfig("weight decay must be >= 0".into()));
        }
        Ok(Self {
            config: config.clone(),
            inner: optimizer(&config.algorithm)?.build(config),
            epoch: 0,
        })
    }

    pub fn current_lr(&self) -> f64 {
        self.config.schedule.lr(self.config.lr, self.epoch)
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<(), OptimError> {
        let lr = self.current_lr();
        self.inner.step(params, grads, lr)?;
        self.epoch += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::vector(vec![v]).unwrap()
    }

    #[test]
    fn adamw_descends_on_square() {
        let mut st = OptimizerState::new(&OptimizerConfig::adamw(0.1, 0.0)).unwrap();
        let mut x = scalar(1.0);
        let g = scalar(2.0);
        st.step(&mut [&mut x], &[&g]).unwrap();
        assert!(x.data()[0] < 1.0);
    }

    #[test]
    fn adamw_first_step_is_lr_sized() {
        // m̂ = g, v̂ = g², so the first step is lr · g / (|g| + eps).
        for g in [1e-3, 0.5, 40.0] {
            let lr = 1e-2;
            let cfg = OptimizerConfig::adamw(lr, 0.0);
            let mut st = OptimizerState::new(&cfg).unwrap();
            let mut x = scalar(0.0);
            st.step(&mut [&mut x], &[&scalar(g)]).unwrap();
            let expect = -lr * g / (g + cfg.eps);
            assert!((x.data()[0] - expect).abs() < 1e-15, "{g}");
        }
    }

    #[test]
    fn adamw_weight_decay_is_decoupled() {
        let mut st = OptimizerState::new(&OptimizerConfig::adamw(0.1, 0.5)).unwrap();
        let mut x = scalar(2.0);
        st.step(&mut [&mut x], &[&scalar(0.0)]).unwrap();
        assert!((x.data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn sgd_plain_descent() {
        let mut st = OptimizerState::new(&OptimizerConfig::sgd(0.25)).unwrap();
        let mut x = scalar(1.0);
        st.step(&mut [&mut x], &[&scalar(2.0)]).unwrap();
        assert_eq!(x.data()[0], 0.5);
    }

    #[test]
    fn cosine_restarts_at_base() {
        let s = Schedule::CosineWarmRestart { period: 15 };
        for restart in [0, 15, 30, 45] {
            assert_eq!(s.lr(1e-4, restart), 1e-4);
        }
        for e in 0..100 {
            assert!(s.lr(1e-4, e) > 0.0);
        }
        assert!(s.lr(1e-4, 14) < s.lr(1e-4, 7));
        assert_eq!("cosine:15".parse::<Schedule>().unwrap(), s);
        assert!("cosine:0".parse::<Schedule>().is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut st = OptimizerState::new(&OptimizerConfig::default()).unwrap();
        let mut x = Tensor::zeros(vec![2]);
        let g = Tensor::zeros(vec![3]);
        assert!(matches!(
            st.step(&mut [&mut x], &[&g]),
            Err(OptimError::Tensor(TensorError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn invalid_configs() {
        assert!(OptimizerState::new(&OptimizerConfig::sgd(0.0)).is_err());
        let cfg = OptimizerConfig {
            algorithm: "lbfgs".into(),
            ..OptimizerConfig::default()
        };
        assert!(OptimizerState::new(&cfg).is_err());
    }
}
