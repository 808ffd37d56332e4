//! Experiment configuration: defaults, then a `key = value` file, then flags.
//!
//! Every key has a default; the effective configuration is echoed verbatim to
//! `config.echo`, and parsing that echo reproduces the same configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;
use varprompt_core::curvature::{NoiseShape, TestFunction};
use varprompt_core::decoder::Combine;
use varprompt_core::dist::{self, NoiseFamily};
use varprompt_core::landscapes::LANDSCAPES;
use varprompt_core::merge;
use varprompt_core::optim::{self, OptimizerConfig, Schedule};
use varprompt_core::rng::DEFAULT_SEED;

pub const SEED_ENV: &str = "VARPROMPT_SEED";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("config file {path}: line {line}: {message}")]
    File {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
}

impl ConfigError {
    pub fn invalid(key: &str, message: impl Display) -> Self {
        Self::Invalid {
            key: key.to_string(),
            message: message.to_string(),
        }
    }

    /// The offending key, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Invalid { key, .. } => Some(key),
            Self::UnknownKey(key) => Some(key),
            _ => None,
        }
    }
}

pub const EXPERIMENTS: [&str; 7] = [
    "verify-prop1",
    "scaling",
    "prompt-study",
    "center-seeking",
    "ablate-dist",
    "merge-eval",
    "grad-check",
];

/// Keys in echo order, with their help text.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed"),
    ("trials", "number of trials (tasks, paired runs, cases or random matrices)"),
    ("jobs", "worker threads; output is independent of this"),
    ("out", "output directory"),
    ("prompts", "prompts per task (m)"),
    ("dim", "prompt dimension (n)"),
    ("height", "mask height"),
    ("width", "mask width"),
    ("features", "decoder feature channels"),
    ("combine", "how prompts combine: max | sum"),
    ("mc_samples", "Monte Carlo samples per epoch (K)"),
    ("nu", "Student-t degrees of freedom"),
    ("family", "noise family: student-t | gaussian | student-t-literal"),
    ("paper_literal_reparam", "use the literal (nu+n)/sqrt(delta) multiplier"),
    ("antithetic", "draw Monte Carlo samples in +/- pairs"),
    ("optimizer", "sgd | adamw"),
    ("lr", "learning rate"),
    ("weight_decay", "decoupled weight decay"),
    ("schedule", "constant | cosine:<period>"),
    ("min_improvement", "stopping: minimum loss improvement"),
    ("patience", "stopping: epochs without improvement"),
    ("max_epochs", "epoch cap per trial"),
    ("init_std", "std of initial prompt entries"),
    ("landscape", "landscape name"),
    ("landscape_dim", "landscape dimension"),
    ("radius", "landscape basin radius"),
    ("sharpness", "landscape wall sharpness"),
    ("merge", "merge strategy name or `all`"),
    ("merge_samples", "samples merged at inference"),
    ("threshold", "mask probability threshold"),
    ("fn", "test function name(s), comma separated, or quadratic-form"),
    ("fn_dim", "dimension of random quadratic forms"),
    ("sigma", "noise scales, comma separated"),
    ("samples", "Monte Carlo samples (pairs when antithetic)"),
    ("probes", "Hutchinson probes"),
    ("noise", "gaussian | uniform-ball"),
    ("same_task", "run every prompt-study trial on one task"),
];

/// Keys that do not influence results and are left out of the config hash.
const NON_SEMANTIC: [&str; 2] = ["jobs", "out"];

pub const QUADRATIC_FORM: &str = "quadratic-form";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub trials: usize,
    pub jobs: usize,
    pub out: PathBuf,
    pub prompts: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub features: usize,
    pub combine: Combine,
    pub mc_samples: usize,
    pub nu: f64,
    pub family: String,
    pub paper_literal_reparam: bool,
    pub antithetic: bool,
    pub optimizer: String,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub min_improvement: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub init_std: f64,
    pub landscape: String,
    pub landscape_dim: usize,
    pub radius: f64,
    pub sharpness: f64,
    pub merge: String,
    pub merge_samples: usize,
    pub threshold: f64,
    pub functions: Vec<String>,
    pub fn_dim: usize,
    pub sigmas: Vec<f64>,
    pub samples: usize,
    pub probes: usize,
    pub noise: NoiseShape,
    pub same_task: bool,
}

/// Learning rate for the toy mask-loss studies; the mean-over-pixels loss
/// has gradients of order 1/(H·W).
pub const TOY_LR: f64 = 10.0;

impl ExperimentConfig {
    pub fn defaults(experiment: &str) -> Result<Self, ConfigError> {
        if !EXPERIMENTS.contains(&experiment) {
            return Err(ConfigError::UnknownExperiment(experiment.to_string()));
        }
        let toy = matches!(experiment, "prompt-study" | "merge-eval");
        let trials = match experiment {
            "center-seeking" => 200,
            "grad-check" => 120,
            "verify-prop1" => 10,
            "scaling" => 1,
            _ => 50,
        };
        let (functions, sigmas): (Vec<&str>, Vec<f64>) = match experiment {
            "scaling" => (
                vec!["exp-sum", "softplus-sum", "quartic", "gaussian-bump"],
                vec![0.02, 0.05, 0.1, 0.2],
            ),
            _ => (vec![QUADRATIC_FORM], vec![0.05, 0.1, 0.3]),
        };
        let opt = OptimizerConfig::default();
        Ok(Self {
            experiment: experiment.to_string(),
            seed: DEFAULT_SEED,
            trials,
            jobs: 1,
            out: PathBuf::from("out"),
            prompts: varprompt_core::decoder::DEFAULT_PROMPTS,
            dim: varprompt_core::decoder::DEFAULT_DIM,
            height: varprompt_core::decoder::DEFAULT_HEIGHT,
            width: varprompt_core::decoder::DEFAULT_WIDTH,
            features: varprompt_core::decoder::DEFAULT_FEATURES,
            combine: Combine::Max,
            mc_samples: dist::DEFAULT_MC_SAMPLES,
            nu: dist::DEFAULT_NU,
            family: "student-t".to_string(),
            paper_literal_reparam: false,
            antithetic: experiment == "center-seeking",
            optimizer: opt.algorithm.clone(),
            lr: if toy { TOY_LR } else { opt.lr },
            weight_decay: opt.weight_decay,
            schedule: opt.schedule,
            min_improvement: optim::DEFAULT_MIN_IMPROVEMENT,
            patience: optim::DEFAULT_PATIENCE,
            max_epochs: optim::DEFAULT_MAX_EPOCHS,
            init_std: optim::DEFAULT_INIT_STD,
            landscape: "plateau-ball".to_string(),
            landscape_dim: varprompt_core::landscapes::DEFAULT_DIM,
            radius: varprompt_core::landscapes::DEFAULT_RADIUS,
            sharpness: varprompt_core::landscapes::DEFAULT_SHARPNESS,
            merge: "all".to_string(),
            merge_samples: merge::DEFAULT_MERGE_SAMPLES,
            threshold: merge::DEFAULT_THRESHOLD,
            functions: functions.into_iter().map(String::from).collect(),
            fn_dim: 8,
            sigmas,
            samples: 1_000_000,
            probes: 2000,
            noise: NoiseShape::Gaussian,
            same_task: false,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "prompts" => self.prompts = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "features" => self.features = parse(key, value)?,
            "combine" => self.combine = parse(key, value)?,
            "mc_samples" => self.mc_samples = parse(key, value)?,
            "nu" => self.nu = parse_f64(key, value)?,
            "family" => self.family = value.to_string(),
            "paper_literal_reparam" => self.paper_literal_reparam = parse_bool(key, value)?,
            "antithetic" => self.antithetic = parse_bool(key, value)?,
            "optimizer" => self.optimizer = value.to_string(),
            "lr" => self.lr = parse_f64(key, value)?,
            "weight_decay" => self.weight_decay = parse_f64(key, value)?,
            "schedule" => self.schedule = parse(key, value)?,
            "min_improvement" => self.min_improvement = parse_f64(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "init_std" => self.init_std = parse_f64(key, value)?,
            "landscape" => self.landscape = value.to_string(),
            "landscape_dim" => self.landscape_dim = parse(key, value)?,
            "radius" => self.radius = parse_f64(key, value)?,
            "sharpness" => self.sharpness = parse_f64(key, value)?,
            "merge" => self.merge = value.to_string(),
            "merge_samples" => self.merge_samples = parse(key, value)?,
            "threshold" => self.threshold = parse_f64(key, value)?,
            "fn" => self.functions = split_list(value).map(String::from).collect(),
            "fn_dim" => self.fn_dim = parse(key, value)?,
            "sigma" => {
                self.sigmas = split_list(value)
                    .map(|v| parse_f64(key, v))
                    .collect::<Result<_, _>>()?
            }
            "samples" => self.samples = parse(key, value)?,
            "probes" => self.probes = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "same_task" => self.same_task = parse_bool(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        KEYS.iter()
            .map(|(k, _)| {
                let v = match *k {
                    "seed" => self.seed.to_string(),
                    "trials" => self.trials.to_string(),
                    "jobs" => self.jobs.to_string(),
                    "out" => self.out.display().to_string(),
                    "prompts" => self.prompts.to_string(),
                    "dim" => self.dim.to_string(),
                    "height" => self.height.to_string(),
                    "width" => self.width.to_string(),
                    "features" => self.features.to_string(),
                    "combine" => self.combine.to_string(),
                    "mc_samples" => self.mc_samples.to_string(),
                    "nu" => self.nu.to_string(),
                    "family" => self.family.clone(),
                    "paper_literal_reparam" => self.paper_literal_reparam.to_string(),
                    "antithetic" => self.antithetic.to_string(),
                    "optimizer" => self.optimizer.clone(),
                    "lr" => self.lr.to_string(),
                    "weight_decay" => self.weight_decay.to_string(),
                    "schedule" => self.schedule.to_string(),
                    "min_improvement" => self.min_improvement.to_string(),
                    "patience" => self.patience.to_string(),
                    "max_epochs" => self.max_epochs.to_string(),
                    "init_std" => self.init_std.to_string(),
                    "landscape" => self.landscape.clone(),
                    "landscape_dim" => self.landscape_dim.to_string(),
                    "radius" => self.radius.to_string(),
                    "sharpness" => self.sharpness.to_string(),
                    "merge" => self.merge.clone(),
                    "merge_samples" => self.merge_samples.to_string(),
                    "threshold" => self.threshold.to_string(),
                    "fn" => self.functions.join(","),
                    "fn_dim" => self.fn_dim.to_string(),
                    "sigma" => list(&self.sigmas),
                    "samples" => self.samples.to_string(),
                    "probes" => self.probes.to_string(),
                    "noise" => self.noise.to_string(),
                    "same_task" => self.same_task.to_string(),
                    _ => unreachable!("every key is echoed"),
                };
                (*k, v)
            })
            .collect()
    }

    /// `config.echo` contents: the experiment line, then every key.
    pub fn echo(&self) -> String {
        let mut s = format!("experiment = {}\n", self.experiment);
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Parses an echo (or any config file that names its experiment).
    pub fn from_echo(text: &str) -> Result<Self, ConfigError> {
        let pairs = parse_pairs(text, Path::new("<echo>"))?;
        let experiment = pairs
            .iter()
            .find(|(k, _, _)| k == "experiment")
            .map(|(_, v, _)| v.clone())
            .ok_or_else(|| ConfigError::Usage("echo lacks an experiment line".into()))?;
        let mut cfg = Self::defaults(&experiment)?;
        for (k, v, _) in pairs.iter().filter(|(k, _, _)| k != "experiment") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 over the semantic keys of the echo.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("experiment = {}\n", self.experiment));
        for (k, v) in self.entries() {
            if !NON_SEMANTIC.contains(&k) {
                h.update(format!("{k} = {v}\n"));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn noise_family(&self) -> Result<&'static dyn NoiseFamily, ConfigError> {
        let name = if self.paper_literal_reparam && self.family == "student-t" {
            "student-t-literal"
        } else {
            self.family.as_str()
        };
        dist::family(name).map_err(|e| ConfigError::invalid("family", e))
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            algorithm: self.optimizer.clone(),
            lr: self.lr,
            weight_decay: self.weight_decay,
            schedule: self.schedule,
            ..OptimizerConfig::default()
        }
    }

    pub fn train_config(&self) -> optim::TrainConfig {
        optim::TrainConfig {
            optimizer: self.optimizer_config(),
            min_improvement: self.min_improvement,
            patience: self.patience,
            max_epochs: self.max_epochs,
            init_std: self.init_std,
        }
    }

    pub fn variational_config(&self) -> Result<optim::VariationalConfig, ConfigError> {
        Ok(optim::VariationalConfig {
            mc_samples: self.mc_samples,
            family: self.noise_family()?,
            nu: self.nu,
            zero_scale: false,
            antithetic: self.antithetic,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(ConfigError::invalid(key, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        let positive_f = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be > 0, got {v}")))
            }
        };
        for (k, v) in [
            ("trials", self.trials),
            ("jobs", self.jobs),
            ("prompts", self.prompts),
            ("dim", self.dim),
            ("height", self.height),
            ("width", self.width),
            ("features", self.features),
            ("mc_samples", self.mc_samples),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("landscape_dim", self.landscape_dim),
            ("merge_samples", self.merge_samples),
            ("fn_dim", self.fn_dim),
            ("samples", self.samples),
        ] {
            positive(k, v)?;
        }
        for (k, v) in [
            ("nu", self.nu),
            ("lr", self.lr),
            ("init_std", self.init_std),
            ("radius", self.radius),
            ("sharpness", self.sharpness),
        ] {
            positive_f(k, v)?;
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ConfigError::invalid("weight_decay", "must be >= 0"));
        }
        if !(self.min_improvement >= 0.0 && self.min_improvement.is_finite()) {
            return Err(ConfigError::invalid("min_improvement", "must be >= 0"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ConfigError::invalid("threshold", "must lie in (0, 1)"));
        }
        if self.probes < 2 {
            return Err(ConfigError::invalid("probes", "must be >= 2"));
        }
        if self.sigmas.is_empty() {
            return Err(ConfigError::invalid("sigma", "needs at least one value"));
        }
        for &s in &self.sigmas {
            positive_f("sigma", s)?;
        }
        let family = self.noise_family()?;
        family
            .validate(self.nu, self.dim)
            .map_err(|e| ConfigError::invalid("nu", e))?;
        optim::optimizer(&self.optimizer).map_err(|e| ConfigError::invalid("optimizer", e))?;
        if !LANDSCAPES.contains(&self.landscape.as_str()) {
            return Err(ConfigError::invalid(
                "landscape",
                format!("unknown `{}` (known: {})", self.landscape, LANDSCAPES.join(", ")),
            ));
        }
        if self.merge != "all" {
            merge::strategy(&self.merge).map_err(|e| ConfigError::invalid("merge", e))?;
        }
        if self.functions.is_empty() {
            return Err(ConfigError::invalid("fn", "needs at least one function"));
        }
        for f in &self.functions {
            if f != QUADRATIC_FORM {
                TestFunction::from_str(f).map_err(|e| ConfigError::invalid("fn", e))?;
            }
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| ConfigError::invalid(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::invalid(key, "must be finite"))
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ConfigError::invalid(key, format!("expected true/false, got `{other}`"))),
    }
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::File {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

/// Applies a config file on top of `cfg`. An `experiment` line, if present,
/// must agree with the chosen experiment.
pub fn apply_file(cfg: &mut ExperimentConfig, path: &Path) -> Result<(), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    for (k, v, line) in parse_pairs(&text, path)? {
        if k == "experiment" {
            if v != cfg.experiment {
                return Err(ConfigError::File {
                    path: path.to_path_buf(),
                    line,
                    message: format!("file is for `{v}`, not `{}`", cfg.experiment),
                });
            }
            continue;
        }
        cfg.set(&k, &v)?;
    }
    Ok(())
}
