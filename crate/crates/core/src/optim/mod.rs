//! Prompt learners.
//!
//! [`optimize_vanilla`] treats the prompt matrix itself as the parameter and
//! descends the objective directly. [`optimize_variational`] learns a
//! [`PromptDistribution`] by descending the `K`-sample Monte Carlo estimate of
//! the expected objective under reparameterized samples, and reports the
//! metrics of its mean prompt.

mod optimizer;
mod stopping;

pub use optimizer::{
    optimizer, optimizers, AdamW, Optimizer, OptimizerConfig, OptimizerKind, OptimizerState,
    Schedule, Sgd,
};
pub use stopping::{StoppingRule, DEFAULT_MIN_IMPROVEMENT, DEFAULT_PATIENCE};

use std::fmt;

use thiserror::Error;

use crate::dist::{DistError, DistVars, NoiseFamily, PromptDistribution, StudentT};
use crate::objective::Objective;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};

/// Standard deviation of the random initial prompt entries.
pub const DEFAULT_INIT_STD: f64 = 25.0;
pub const DEFAULT_MAX_EPOCHS: usize = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub min_improvement: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            min_improvement: DEFAULT_MIN_IMPROVEMENT,
            patience: DEFAULT_PATIENCE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            init_std: DEFAULT_INIT_STD,
        }
    }
}

#[derive(Clone)]
pub struct VariationalConfig {
    pub mc_samples: usize,
    pub family: &'static dyn NoiseFamily,
    pub nu: f64,
    pub zero_scale: bool,
    /// Draw the Monte Carlo samples in `±ξ` pairs. Still unbiased (every
    /// family is symmetric); removes the odd-order part of the estimator noise.
    pub antithetic: bool,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        Self {
            mc_samples: crate::dist::DEFAULT_MC_SAMPLES,
            family: &StudentT,
            nu: crate::dist::DEFAULT_NU,
            zero_scale: false,
            antithetic: false,
        }
    }
}

impl fmt::Debug for VariationalConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VariationalConfig")
            .field("mc_samples", &self.mc_samples)
            .field("family", &self.family.name())
            .field("nu", &self.nu)
            .field("zero_scale", &self.zero_scale)
            .field("antithetic", &self.antithetic)
            .finish()
    }
}

impl PartialEq for VariationalConfig {
    fn eq(&self, other: &Self) -> bool {
        self.mc_samples == other.mc_samples
            && self.family.name() == other.family.name()
            && self.nu.to_bits() == other.nu.to_bits()
            && self.zero_scale == other.zero_scale
            && self.antithetic == other.antithetic
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Converged,
    EpochLimit,
    Diverged(String),
}

impl TrialStatus {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::EpochLimit => "epoch-limit",
            Self::Diverged(_) => "diverged",
        }
    }

    pub fn is_ok(&self) -> bool {
        !matches!(self, Self::Diverged(_))
    }
}

/// One optimization run and everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub seed: u64,
    pub stream: u64,
    pub mode: String,
    pub config: TrainConfig,
    pub variational: Option<VariationalConfig>,
    pub loss_trace: Vec<f64>,
    pub epochs_run: usize,
    pub status: TrialStatus,
    /// The learned prompt (vanilla) or mean prompt (variational).
    pub final_z: Tensor,
    pub final_log_sigma: Option<Tensor>,
    /// Objective metrics at `final_z`.
    pub metrics: Vec<(&'static str, f64)>,
    /// Metrics averaged over `K` prompts sampled from the final distribution.
    pub sampled_metrics: Vec<(&'static str, f64)>,
}

impl TrialRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }

    pub fn best_trace(&self) -> Vec<f64> {
        self.loss_trace
            .iter()
            .scan(f64::INFINITY, |best, &l| {
                *best = best.min(l);
                Some(*best)
            })
            .collect()
    }

    pub fn final_distribution(&self) -> Option<Result<PromptDistribution, DistError>> {
        let v = self.variational.as_ref()?;
        let ls = self.final_log_sigma.clone()?;
        Some(
            PromptDistribution::with_log_sigma(self.final_z.clone(), ls, v.nu, v.family).map(|d| {
                if v.zero_scale {
                    d.with_zero_scale()
                } else {
                    d
                }
            }),
        )
    }
}

pub fn mode_label(variational: Option<&VariationalConfig>) -> String {
    match variational {
        None => "vanilla".to_string(),
        Some(v) => match v.family.name() {
            "student-t" => "variational-t".to_string(),
            other => format!("variational-{other}"),
        },
    }
}

fn initial_prompt(obj: &dyn Objective, rng: &mut Rng, init_std: f64) -> Result<Tensor, OptimError> {
    let (rows, cols) = obj.shape();
    Ok(rng.normal(vec![rows, cols]).map(|v| init_std * v)?)
}

fn validate(cfg: &TrainConfig) -> Result<(), OptimError> {
    if cfg.max_epochs == 0 || cfg.patience == 0 {
        return Err(OptimError::InvalidConfig(
            "max_epochs and patience must be positive".into(),
        ));
    }
    if !(cfg.min_improvement >= 0.0) {
        return Err(OptimError::InvalidConfig("min_improvement must be >= 0".into()));
    }
    Ok(())
}

/// Plain gradient descent on the prompt, starting from `N(0, init_std²)`.
pub fn optimize_vanilla(
    obj: &dyn Objective,
    rng: &mut Rng,
    cfg: &TrainConfig,
) -> Result<TrialRecord, OptimError> {
    let z0 = initial_prompt(obj, rng, cfg.init_std)?;
    optimize_vanilla_from(obj, z0, rng, cfg)
}

pub fn optimize_vanilla_from(
    obj: &dyn Objective,
    mut z: Tensor,
    rng: &Rng,
    cfg: &TrainConfig,
) -> Result<TrialRecord, OptimError> {
    validate(cfg)?;
    let mut opt = OptimizerState::new(&cfg.optimizer)?;
    let mut stop = StoppingRule::new(cfg.min_improvement, cfg.patience);
    let mut trace = Vec::new();
    let mut status = TrialStatus::EpochLimit;
    for _ in 0..cfg.max_epochs {
        let step = (|| {
            let tape = Tape::new();
            let zv = tape.leaf(z.clone());
            let loss = obj.loss(&tape, zv)?;
            tape.backward(loss)?;
            let grad = tape
                .grad(zv)
                .unwrap_or_else(|| Tensor::zeros(z.shape().to_vec()));
            Ok::<_, TensorError>((loss.item(), grad))
        })();
        let (loss, grad) = match step {
            Ok(v) => v,
            Err(e) => {
                status = TrialStatus::Diverged(e.to_string());
                break;
            }
        };
        trace.push(loss);
        if stop.update(loss) {
            status = TrialStatus::Converged;
            break;
        }
        opt.step(&mut [&mut z], &[&grad])?;
    }
    let metrics = match status {
        TrialStatus::Diverged(_) => Vec::new(),
        _ => obj.metrics(&z)?,
    };
    Ok(TrialRecord {
        trial_id: rng.stream() >> 8,
        seed: rng.seed(),
        stream: rng.stream(),
        mode: mode_label(None),
        config: cfg.clone(),
        variational: None,
        epochs_run: trace.len(),
        loss_trace: trace,
        status,
        final_z: z,
        final_log_sigma: None,
        metrics,
        sampled_metrics: Vec::new(),
    })
}

/// `(1/K) Σ_k L(z_k)` on the tape for `K` fresh reparameterized samples.
fn mc_objective<'t>(
    obj: &dyn Objective,
    d: &PromptDistribution,
    vars: &DistVars<'t>,
    rng: &mut Rng,
    k: usize,
    antithetic: bool,
) -> Result<crate::tape::Var<'t>, OptimError> {
    let mut total = None;
    let mut pending: Option<Tensor> = None;
    for _ in 0..k {
        let noise = match pending.take() {
            Some(n) => n.map(|v| -v)?,
            None => {
                let n = d.draw_noise(rng)?;
                if antithetic {
                    pending = Some(n.clone());
                }
                n
            }
        };
        let z = d.reparameterize(vars, &noise)?;
        let l = obj.loss(vars.mu.tape(), z)?;
        total = Some(match total {
            None => l,
            Some(t) => l.add(t)?,
        });
    }
    let total = total.ok_or_else(|| OptimError::InvalidConfig("K must be >= 1".into()))?;
    Ok(total.mul_scalar(1.0 / k as f64)?)
}

/// One `K`-sample estimate of the expected objective at a frozen distribution.
pub fn mc_loss_estimate(
    obj: &dyn Objective,
    d: &PromptDistribution,
    rng: &mut Rng,
    k: usize,
    antithetic: bool,
) -> Result<f64, OptimError> {
    let tape = Tape::new();
    let vars = DistVars {
        mu: tape.constant(d.mu.clone()),
        log_sigma: tape.constant(d.log_sigma.clone()),
    };
    Ok(mc_objective(obj, d, &vars, rng, k, antithetic)?.item())
}

/// Variational optimization: `mu` starts at `N(0, init_std²)` (drawn exactly
/// as in [`optimize_vanilla`]), `log_sigma` at zero.
pub fn optimize_variational(
    obj: &dyn Objective,
    rng: &mut Rng,
    cfg: &TrainConfig,
    vcfg: &VariationalConfig,
) -> Result<TrialRecord, OptimError> {
    let mu = initial_prompt(obj, rng, cfg.init_std)?;
    let mut d = PromptDistribution::new(mu, vcfg.nu, vcfg.family)?;
    if vcfg.zero_scale {
        d = d.with_zero_scale();
    }
    optimize_variational_from(obj, d, rng, cfg, vcfg.mc_samples, vcfg.antithetic)
}

pub fn optimize_variational_from(
    obj: &dyn Objective,
    mut d: PromptDistribution,
    rng: &mut Rng,
    cfg: &TrainConfig,
    mc_samples: usize,
    antithetic: bool,
) -> Result<TrialRecord, OptimError> {
    validate(cfg)?;
    if mc_samples == 0 {
        return Err(OptimError::InvalidConfig("K must be >= 1".into()));
    }
    d.validate()?;
    let vcfg = VariationalConfig {
        mc_samples,
        family: d.family,
        nu: d.nu,
        zero_scale: d.zero_scale,
        antithetic,
    };
    let mut opt = OptimizerState::new(&cfg.optimizer)?;
    let mut stop = StoppingRule::new(cfg.min_improvement, cfg.patience);
    let mut trace = Vec::new();
    let mut status = TrialStatus::EpochLimit;
    for _ in 0..cfg.max_epochs {
        let step = (|| {
            let tape = Tape::new();
            let vars = d.leaves(&tape);
            let loss = mc_objective(obj, &d, &vars, rng, mc_samples, antithetic)?;
            tape.backward(loss)?;
            let zeros = || Tensor::zeros(d.mu.shape().to_vec());
            let g_mu = tape.grad(vars.mu).unwrap_or_else(zeros);
            let g_ls = tape.grad(vars.log_sigma).unwrap_or_else(zeros);
            Ok::<_, OptimError>((loss.item(), g_mu, g_ls))
        })();
        let (loss, g_mu, g_ls) = match step {
            Ok(v) => v,
            Err(OptimError::Tensor(e)) => {
                status = TrialStatus::Diverged(e.to_string());
                break;
            }
            Err(OptimError::Dist(DistError::Tensor(e))) => {
                status = TrialStatus::Diverged(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        trace.push(loss);
        if stop.update(loss) {
            status = TrialStatus::Converged;
            break;
        }
        if d.zero_scale {
            opt.step(&mut [&mut d.mu], &[&g_mu])?;
        } else {
            opt.step(&mut [&mut d.mu, &mut d.log_sigma], &[&g_mu, &g_ls])?;
            if let Err(e) = d.validate() {
                status = TrialStatus::Diverged(e.to_string());
                break;
            }
        }
    }
    let (metrics, sampled_metrics) = match status {
        TrialStatus::Diverged(_) => (Vec::new(), Vec::new()),
        _ => (
            obj.metrics(&d.mu)?,
            sampled_metrics(obj, &d, rng, mc_samples)?,
        ),
    };
    Ok(TrialRecord {
        trial_id: rng.stream() >> 8,
        seed: rng.seed(),
        stream: rng.stream(),
        mode: mode_label(Some(&vcfg)),
        config: cfg.clone(),
        variational: Some(vcfg),
        epochs_run: trace.len(),
        loss_trace: trace,
        status,
        final_z: d.mu,
        final_log_sigma: Some(d.log_sigma),
        metrics,
        sampled_metrics,
    })
}

fn sampled_metrics(
    obj: &dyn Objective,
    d: &PromptDistribution,
    rng: &mut Rng,
    k: usize,
) -> Result<Vec<(&'static str, f64)>, OptimError> {
    let mut acc: Vec<(&'static str, f64)> = Vec::new();
    for _ in 0..k {
        let z = d.sample(rng)?;
        for (i, (name, v)) in obj.metrics(&z)?.into_iter().enumerate() {
            match acc.get_mut(i) {
                Some(slot) => slot.1 += v,
                None => acc.push((name, v)),
            }
        }
    }
    acc.iter_mut().for_each(|(_, v)| *v /= k as f64);
    Ok(acc)
}
