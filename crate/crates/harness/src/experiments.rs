//! The experiment registry. Each experiment turns a config into a result
//! table plus pass/fail verdicts; trials run on the caller's thread pool and
//! come back in trial order.

use std::time::Instant;

use rayon::prelude::*;
use varprompt_core::curvature::{
    self, scaling_study, verify_prop1, CurvatureError, Prop1Options, QuadraticForm,
    ScalingVerdict, TestFunction,
};
use varprompt_core::decoder::{make_task, TaskSpec, ToyTask};
use varprompt_core::dist::{self, PromptDistribution};
use varprompt_core::gradcheck::{grad_case, GRAD_OPS};
use varprompt_core::landscapes::{
    center_seeking_trial, landscape_with, pca_project, summarize, Landscape, StudyConfig,
    MIN_STUDY_TRIALS,
};
use varprompt_core::merge::{self, infer, MergeStrategy};
use varprompt_core::objective::Objective;
use varprompt_core::optim::{optimize_vanilla, optimize_variational, TrialRecord};
use varprompt_core::rng::{Lane, Rng};
use varprompt_core::tensor::Tensor;

use crate::config::{ConfigError, ExperimentConfig, QUADRATIC_FORM};
use crate::table::{Cell, Column, ResultTable};
use crate::RunError;

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub criterion: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(criterion: &str, pass: bool, detail: String) -> Self {
        Self {
            criterion: criterion.to_string(),
            pass,
            detail,
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        format!("{tag} {}: {}", self.criterion, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub table: ResultTable,
    pub verdicts: Vec<Verdict>,
    /// Informational lines for `summary.txt` (not part of the CSV).
    pub notes: Vec<String>,
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn columns(&self) -> &'static [Column];

    /// Experiment-specific checks beyond the generic validation.
    fn check(&self, _cfg: &ExperimentConfig) -> Result<(), ConfigError> {
        Ok(())
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome, RunError>;
}

static EXPERIMENTS: [&dyn Experiment; 7] = [
    &VerifyProp1,
    &Scaling,
    &PromptStudy,
    &CenterSeeking,
    &AblateDist,
    &MergeEval,
    &GradCheck,
];

pub fn experiments() -> &'static [&'static dyn Experiment] {
    &EXPERIMENTS
}

pub fn experiment(name: &str) -> Result<&'static dyn Experiment, ConfigError> {
    EXPERIMENTS
        .iter()
        .copied()
        .find(|e| e.name() == name)
        .ok_or_else(|| ConfigError::UnknownExperiment(name.to_string()))
}

fn runtime(e: impl std::fmt::Display) -> RunError {
    RunError::Runtime(e.to_string())
}

/// Maps `f` over `0..n` in parallel, preserving order.
fn trials<T: Send>(
    n: usize,
    f: impl Fn(usize) -> Result<T, RunError> + Sync + Send,
) -> Result<Vec<T>, RunError> {
    (0..n).into_par_iter().map(f).collect()
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

// ---------------------------------------------------------------- verify-prop1

pub struct VerifyProp1;

static PROP1_COLUMNS: [Column; 12] = [
    ("trial", "-"),
    ("function", "-"),
    ("dim", "-"),
    ("sigma", "-"),
    ("samples", "-"),
    ("noise_gap", "loss"),
    ("std_error", "loss"),
    ("laplacian", "loss"),
    ("laplacian_source", "-"),
    ("predicted_gap", "loss"),
    ("residual", "loss"),
    ("within_3se", "-"),
];

impl Experiment for VerifyProp1 {
    fn name(&self) -> &'static str {
        "verify-prop1"
    }

    fn columns(&self) -> &'static [Column] {
        &PROP1_COLUMNS
    }

    fn check(&self, cfg: &ExperimentConfig) -> Result<(), ConfigError> {
        if cfg.samples < 2 {
            return Err(ConfigError::invalid("samples", "must be >= 2"));
        }
        Ok(())
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
        let opts = Prop1Options {
            noise: cfg.noise,
            antithetic: cfg.antithetic,
            ..Prop1Options::default()
        };
        let per_trial = trials(cfg.trials, |t| {
            let mut rows = Vec::new();
            let mut noise = Rng::for_trial(cfg.seed, t as u64, Lane::Noise);
            for name in &cfg.functions {
                // Random symmetric forms get their exact trace; named functions
                // are checked against the finite-difference Laplacian.
                let (obj, z, exact): (Box<dyn Objective>, Tensor, Option<f64>) =
                    if name == QUADRATIC_FORM {
                        let mut task = Rng::for_trial(cfg.seed, t as u64, Lane::Task);
                        let q = QuadraticForm::random(cfg.fn_dim, &mut task);
                        let z = task.normal(vec![1, cfg.fn_dim]);
                        let tr = q.trace();
                        (Box::new(q), z, Some(tr))
                    } else {
                        let f: TestFunction = name.parse().map_err(runtime)?;
                        (Box::new(f.objective()), f.default_point(), None)
                    };
                for &sigma in &cfg.sigmas {
                    let r = verify_prop1(obj.as_ref(), &z, sigma, cfg.samples, &mut noise, opts)
                        .map_err(runtime)?;
                    let (lap, source) = match exact {
                        Some(tr) => (tr, "exact"),
                        None => (r.laplacian_fd, "finite-difference"),
                    };
                    let predicted = 0.5 * sigma * sigma * lap;
                    let residual = r.noise_gap.mean - predicted;
                    let se = r.noise_gap.std_error;
                    rows.push(vec![
                        Cell::from(t),
                        name.as_str().into(),
                        z.len().into(),
                        sigma.into(),
                        cfg.samples.into(),
                        r.noise_gap.mean.into(),
                        se.into(),
                        lap.into(),
                        source.into(),
                        predicted.into(),
                        residual.into(),
                        (residual.abs() < 3.0 * se).into(),
                    ]);
                }
            }
            Ok(rows)
        })?;
        let mut table = ResultTable::new(&PROP1_COLUMNS);
        per_trial.into_iter().flatten().for_each(|r| table.push(r));
        let within = table
            .rows
            .iter()
            .filter(|r| r[11] == Cell::Bool(true))
            .count();
        let worst = table
            .rows
            .iter()
            .filter_map(|r| match (&r[10], &r[6]) {
                (Cell::Float(res), Cell::Float(se)) if *se > 0.0 => Some(res.abs() / se),
                _ => None,
            })
            .fold(0.0f64, f64::max);
        let all = table.rows.len();
        let name = if cfg.functions.iter().all(|f| f == QUADRATIC_FORM) {
            "A2 quadratic exactness"
        } else {
            "noise gap matches sigma^2/2 * laplacian"
        };
        Ok(Outcome {
            verdicts: vec![Verdict::new(
                name,
                within == all,
                format!("{within}/{all} rows within 3 standard errors; worst |residual|/SE = {worst:.3}"),
            )],
            notes: Vec::new(),
            table,
        })
    }
}

// ---------------------------------------------------------------- scaling

pub struct Scaling;

static SCALING_COLUMNS: [Column; 9] = [
    ("function", "-"),
    ("dim", "-"),
    ("sigma", "-"),
    ("residual", "loss"),
    ("std_error", "loss"),
    ("floor", "loss"),
    ("resolved", "-"),
    ("slope", "-"),
    ("verdict", "-"),
];

/// Minimum log–log slope accepted as third-order residual scaling.
pub const MIN_SLOPE: f64 = 2.5;
/// Non-quadratic functions that must pass.
pub const MIN_SCALING_FUNCTIONS: usize = 3;

impl Experiment for Scaling {
    fn name(&self) -> &'static str {
        "scaling"
    }

    fn columns(&self) -> &'static [Column] {
        &SCALING_COLUMNS
    }

    fn check(&self, cfg: &ExperimentConfig) -> Result<(), ConfigError> {
        if cfg.sigmas.len() < 4 {
            return Err(ConfigError::invalid("sigma", "scaling needs at least 4 values"));
        }
        if cfg.functions.iter().any(|f| f == QUADRATIC_FORM) {
            return Err(ConfigError::invalid("fn", "scaling takes registered test functions"));
        }
        Ok(())
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
        let opts = Prop1Options {
            noise: cfg.noise,
            ..Prop1Options::residual_study()
        };
        let per_fn = trials(cfg.functions.len(), |i| {
            let f: TestFunction = cfg.functions[i].parse().map_err(runtime)?;
            let mut rng = Rng::for_trial(cfg.seed, i as u64, Lane::Noise);
            let z = f.default_point();
            let study = scaling_study(&f.objective(), &z, &cfg.sigmas, cfg.samples, &mut rng, opts);
            let (rows, verdict) = match study {
                Ok(r) => (r.rows, Some(r.verdict)),
                Err(CurvatureError::InsufficientSignal(rows)) => (rows, None),
                Err(e) => return Err(runtime(e)),
            };
            Ok((f, z.len(), rows, verdict))
        })?;
        let mut table = ResultTable::new(&SCALING_COLUMNS);
        let mut passed = 0;
        let mut failed = Vec::new();
        let mut details = Vec::new();
        for (f, dim, rows, verdict) in &per_fn {
            let (slope, label, ok) = match verdict {
                Some(ScalingVerdict::Slope(s)) => (Some(*s), "slope", *s >= MIN_SLOPE),
                Some(ScalingVerdict::Exact) => (None, "exact", true),
                None => (None, "insufficient-signal", false),
            };
            if !f.is_quadratic() {
                if ok {
                    passed += 1;
                } else {
                    failed.push(f.name());
                }
            }
            details.push(match slope {
                Some(s) => format!("{} slope {s:.3}", f.name()),
                None => format!("{} {label}", f.name()),
            });
            for r in rows {
                table.push(vec![
                    f.name().into(),
                    (*dim).into(),
                    r.sigma.into(),
                    r.residual.into(),
                    r.std_error.into(),
                    r.floor.into(),
                    r.resolved().into(),
                    slope.into(),
                    label.into(),
                ]);
            }
        }
        let pass = passed >= MIN_SCALING_FUNCTIONS && failed.is_empty();
        Ok(Outcome {
            verdicts: vec![Verdict::new(
                "A3 residual scaling",
                pass,
                format!(
                    "{passed} non-quadratic functions with slope >= {MIN_SLOPE} or certified exact; {}",
                    details.join(", ")
                ),
            )],
            notes: Vec::new(),
            table,
        })
    }
}

// ---------------------------------------------------------------- toy tasks

fn task_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    if cfg.same_task {
        cfg.seed
    } else {
        Rng::for_trial(cfg.seed, trial as u64, Lane::Task).next_u64()
    }
}

fn task_for(cfg: &ExperimentConfig, trial: usize) -> Result<ToyTask, RunError> {
    make_task(TaskSpec {
        seed: task_seed(cfg, trial),
        prompts: cfg.prompts,
        dim: cfg.dim,
        height: cfg.height,
        width: cfg.width,
        features: cfg.features,
        combine: cfg.combine,
    })
    .map_err(runtime)
}

/// Variational run on a task; the init lane supplies the start and then the
/// Monte Carlo noise.
fn train_variational(cfg: &ExperimentConfig, task: &ToyTask, trial: usize) -> Result<TrialRecord, RunError> {
    let mut rng = Rng::for_trial(cfg.seed, trial as u64, Lane::Init);
    let vcfg = cfg.variational_config()?;
    optimize_variational(task, &mut rng, &cfg.train_config(), &vcfg).map_err(runtime)
}

fn mean_sigma(r: &TrialRecord) -> Option<f64> {
    r.final_log_sigma
        .as_ref()
        .map(|ls| mean(ls.data().iter().map(|v| v.exp())))
}

// ---------------------------------------------------------------- prompt-study

pub struct PromptStudy;

static PROMPT_COLUMNS: [Column; 15] = [
    ("trial", "-"),
    ("task_seed", "-"),
    ("mode", "-"),
    ("status", "-"),
    ("epochs", "-"),
    ("final_loss", "loss"),
    ("iou", "-"),
    ("bce", "loss"),
    ("dice", "loss"),
    ("laplacian", "loss"),
    ("mean_sigma", "-"),
    ("sampled_iou", "-"),
    ("pc1", "-"),
    ("pc2", "-"),
    ("pca_degenerate", "-"),
];

pub const VANILLA_IOU_BAR: f64 = 0.9;
pub const VANILLA_IOU_FRACTION: f64 = 0.95;
pub const IOU_SLACK: f64 = 0.02;
pub const IOU_SLACK_FRACTION: f64 = 0.90;
pub const FLATNESS_FRACTION: f64 = 0.80;

impl Experiment for PromptStudy {
    fn name(&self) -> &'static str {
        "prompt-study"
    }

    fn columns(&self) -> &'static [Column] {
        &PROMPT_COLUMNS
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
        let train = cfg.train_config();
        let pairs = trials(cfg.trials, |t| {
            let task = task_for(cfg, t)?;
            let mut init = Rng::for_trial(cfg.seed, t as u64, Lane::Init);
            let van = optimize_vanilla(&task, &mut init, &train).map_err(runtime)?;
            let var = train_variational(cfg, &task, t)?;
            let lap_van = curvature::flatness_at(&task, &van.final_z).ok();
            let lap_var = curvature::flatness_at(&task, &var.final_z).ok();
            Ok((task.spec.seed, van, var, lap_van, lap_var))
        })?;
        let points: Vec<Tensor> = pairs
            .iter()
            .flat_map(|(_, a, b, _, _)| [a.final_z.clone(), b.final_z.clone()])
            .collect();
        let proj = pca_project(&points).ok();

        let mut table = ResultTable::new(&PROMPT_COLUMNS);
        for (t, (seed, van, var, lap_van, lap_var)) in pairs.iter().enumerate() {
            for (j, (rec, lap)) in [(van, lap_van), (var, lap_var)].into_iter().enumerate() {
                let pc = proj.as_ref().map(|p| p.coords[2 * t + j]);
                table.push(vec![
                    t.into(),
                    (*seed).into(),
                    rec.mode.as_str().into(),
                    rec.status.label().into(),
                    rec.epochs_run.into(),
                    rec.final_loss().into(),
                    rec.metric("iou").into(),
                    rec.metric("bce").into(),
                    rec.metric("dice").into(),
                    (*lap).into(),
                    mean_sigma(rec).into(),
                    rec.sampled_metrics
                        .iter()
                        .find(|(k, _)| *k == "iou")
                        .map(|(_, v)| *v)
                        .into(),
                    pc.map(|c| c[0]).into(),
                    pc.map(|c| c[1]).into(),
                    proj.as_ref().map(|p| p.degenerate).into(),
                ]);
            }
        }

        let n = pairs.len();
        let iou = |r: &TrialRecord| r.metric("iou").filter(|_| r.status.is_ok());
        let van_good = pairs
            .iter()
            .filter(|(_, v, _, _, _)| iou(v).is_some_and(|x| x > VANILLA_IOU_BAR))
            .count();
        let var_close = pairs
            .iter()
            .filter(|(_, v, w, _, _)| match (iou(v), iou(w)) {
                (Some(a), Some(b)) => b >= a - IOU_SLACK,
                _ => false,
            })
            .count();
        let flatter = pairs
            .iter()
            .filter(|(_, _, _, a, b)| matches!((a, b), (Some(a), Some(b)) if b <= a))
            .count();
        let (f1, f2, f3) = (fraction(van_good, n), fraction(var_close, n), fraction(flatter, n));
        let notes = vec![
            format!(
                "mean IoU vanilla {:.4}, variational {:.4}",
                mean(pairs.iter().filter_map(|p| p.1.metric("iou"))),
                mean(pairs.iter().filter_map(|p| p.2.metric("iou")))
            ),
            format!(
                "median Laplacian ratio variational/vanilla {:.4}",
                median(pairs.iter().filter_map(|p| Some(p.4? / p.3?)).collect())
            ),
        ];
        Ok(Outcome {
            verdicts: vec![
                Verdict::new(
                    "A6 vanilla reaches IoU > 0.9",
                    f1 >= VANILLA_IOU_FRACTION,
                    format!("{van_good}/{n} = {f1:.3} (need >= {VANILLA_IOU_FRACTION})"),
                ),
                Verdict::new(
                    "A6 variational IoU >= vanilla - 0.02",
                    f2 >= IOU_SLACK_FRACTION,
                    format!("{var_close}/{n} = {f2:.3} (need >= {IOU_SLACK_FRACTION})"),
                ),
                Verdict::new(
                    "A6 variational Laplacian <= vanilla",
                    f3 >= FLATNESS_FRACTION,
                    format!("{flatter}/{n} = {f3:.3} (need >= {FLATNESS_FRACTION})"),
                ),
            ],
            notes,
            table,
        })
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.retain(|x| x.is_finite());
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

// ---------------------------------------------------------------- landscapes

fn build_landscape(cfg: &ExperimentConfig) -> Result<Box<dyn Landscape>, RunError> {
    let center = Rng::new(cfg.seed, Lane::Task as u64).normal(vec![1, cfg.landscape_dim]);
    landscape_with(&cfg.landscape, &center, cfg.radius, cfg.sharpness).map_err(runtime)
}

fn study_config(cfg: &ExperimentConfig) -> Result<StudyConfig, RunError> {
    Ok(StudyConfig {
        train: cfg.train_config(),
        variational: cfg.variational_config()?,
        init_std: cfg.init_std,
    })
}

fn check_study_trials(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    if cfg.trials < MIN_STUDY_TRIALS {
        return Err(ConfigError::invalid(
            "trials",
            format!("landscape studies need at least {MIN_STUDY_TRIALS}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- center-seeking

pub struct CenterSeeking;

static CENTER_COLUMNS: [Column; 17] = [
    ("trial", "-"),
    ("vanilla_distance", "z"),
    ("variational_distance", "z"),
    ("vanilla_margin", "z"),
    ("variational_margin", "z"),
    ("vanilla_basin", "-"),
    ("variational_basin", "-"),
    ("vanilla_status", "-"),
    ("variational_status", "-"),
    ("vanilla_epochs", "-"),
    ("variational_epochs", "-"),
    ("final_sigma", "z"),
    ("variational_closer", "-"),
    ("vanilla_pc1", "z"),
    ("vanilla_pc2", "z"),
    ("variational_pc1", "z"),
    ("variational_pc2", "z"),
];

pub const CLOSER_FRACTION: f64 = 0.90;
pub const CENTER_TOLERANCE: f64 = 1e-3;

impl Experiment for CenterSeeking {
    fn name(&self) -> &'static str {
        "center-seeking"
    }

    fn columns(&self) -> &'static [Column] {
        &CENTER_COLUMNS
    }

    fn check(&self, cfg: &ExperimentConfig) -> Result<(), ConfigError> {
        check_study_trials(cfg)
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
        let l = build_landscape(cfg)?;
        let study = study_config(cfg)?;
        let rows = trials(cfg.trials, |t| {
            center_seeking_trial(l.as_ref(), cfg.seed, t as u64, &study).map_err(runtime)
        })?;
        let points: Vec<Tensor> = rows
            .iter()
            .flat_map(|r| [r.vanilla_point.clone(), r.variational_point.clone()])
            .collect();
        let proj = pca_project(&points).ok();
        let mut table = ResultTable::new(&CENTER_COLUMNS);
        for (i, r) in rows.iter().enumerate() {
            let pc = |j: usize, k: usize| proj.as_ref().map(|p| p.coords[2 * i + j][k]);
            table.push(vec![
                r.trial.into(),
                r.vanilla_distance.into(),
                r.variational_distance.into(),
                r.vanilla_margin.into(),
                r.variational_margin.into(),
                r.vanilla_basin.into(),
                r.variational_basin.into(),
                r.vanilla_status.label().into(),
                r.variational_status.label().into(),
                r.vanilla_epochs.into(),
                r.variational_epochs.into(),
                r.final_sigma.into(),
                r.variational_closer().into(),
                pc(0, 0).into(),
                pc(0, 1).into(),
                pc(1, 0).into(),
                pc(1, 1).into(),
            ]);
        }
        let s = summarize(&rows);
        let closer = rows.iter().filter(|r| r.variational_closer()).count();
        let notes = vec![
            format!(
                "fraction variational closer {:.4}; mean distance vanilla {:.6}, variational {:.6}",
                s.fraction_variational_closer, s.mean_vanilla_distance, s.mean_variational_distance
            ),
            format!(
                "mean margin vanilla {:.6}, variational {:.6}; divergences {}",
                s.mean_vanilla_margin, s.mean_variational_margin, s.divergences
            ),
        ];
        let verdicts = match cfg.landscape.as_str() {
            "plateau-ball" => vec![Verdict::new(
                "A7 variational mean closer to the center",
                s.fraction_variational_closer >= CLOSER_FRACTION && s.divergences == 0,
                format!(
                    "{closer}/{} = {:.3} (need >= {CLOSER_FRACTION}); divergences {}",
                    rows.len(),
                    s.fraction_variational_closer,
                    s.divergences
                ),
            )],
            "quadratic-well" => {
                let max_v = rows.iter().map(|r| r.vanilla_distance).fold(0.0, f64::max);
                let max_w = rows.iter().map(|r| r.variational_distance).fold(0.0, f64::max);
                vec![Verdict::new(
                    "A7 both reach the quadratic-well center",
                    max_v < CENTER_TOLERANCE && max_w < CENTER_TOLERANCE && s.divergences == 0,
                    format!("max distance vanilla {max_v:.3e}, variational {max_w:.3e} (need < {CENTER_TOLERANCE:e})"),
                )]
            }
            _ => Vec::new(),
        };
        Ok(Outcome {
            table,
            verdicts,
            notes,
        })
    }
}

// ---------------------------------------------------------------- ablate-dist

pub struct AblateDist;

static ABLATE_COLUMNS: [Column; 12] = [
    ("trial", "-"),
    ("vanilla_distance", "z"),
    ("t_distance", "z"),
    ("gaussian_distance", "z"),
    ("literal_distance", "z"),
    ("t_sigma", "z"),
    ("gaussian_sigma", "z"),
    ("literal_sigma", "z"),
    ("t_status", "-"),
    ("gaussian_status", "-"),
    ("literal_status", "-"),
    ("t_not_worse", "-"),
];

pub const T_MAJORITY: f64 = 0.55;
pub const ABLATION_FAMILIES: [&str; 3] = ["student-t", "gaussian", "student-t-literal"];

impl Experiment for AblateDist {
    fn name(&self) -> &'static str {
        "ablate-dist"
    }

    fn columns(&self) -> &'static [Column] {
        &ABLATE_COLUMNS
    }

    fn check(&self, cfg: &ExperimentConfig) -> Result<(), ConfigError> {
        check_study_trials(cfg)
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
        let l = build_landscape(cfg)?;
        let base = study_config(cfg)?;
        let studies = ABLATION_FAMILIES
            .iter()
            .map(|name| {
                let mut s = base.clone();
                s.variational.family = dist::family(name).map_err(runtime)?;
                Ok(s)
            })
            .collect::<Result<Vec<_>, RunError>>()?;
        let rows = trials(cfg.trials, |t| {
            studies
                .iter()
                .map(|s| center_seeking_trial(l.as_ref(), cfg.seed, t as u64, s).map_err(runtime))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let mut table = ResultTable::new(&ABLATE_COLUMNS);
        let mut wins = 0;
        let mut diffs = Vec::new();
        for r in &rows {
            let (t, g, lit) = (&r[0], &r[1], &r[2]);
            let not_worse = t.variational_distance <= g.variational_distance;
            wins += usize::from(not_worse);
            diffs.push(g.variational_distance - t.variational_distance);
            table.push(vec![
                t.trial.into(),
                t.vanilla_distance.into(),
                t.variational_distance.into(),
                g.variational_distance.into(),
                lit.variational_distance.into(),
                t.final_sigma.into(),
                g.final_sigma.into(),
                lit.final_sigma.into(),
                t.variational_status.label().into(),
                g.variational_status.label().into(),
                lit.variational_status.label().into(),
                not_worse.into(),
            ]);
        }
        let n = rows.len();
        let frac = fraction(wins, n);
        let mean_of = |i: usize| mean(rows.iter().map(|r| r[i].variational_distance));
        let notes = vec![format!(
            "mean distance t {:.6}, gaussian {:.6}, literal {:.6}; median paired (gaussian - t) {:.3e}",
            mean_of(0),
            mean_of(1),
            mean_of(2),
            median(diffs.clone())
        )];
        Ok(Outcome {
            verdicts: vec![Verdict::new(
                "A8 t distance <= gaussian distance on a majority",
                frac > T_MAJORITY,
                format!(
                    "{wins}/{n} = {frac:.3} (need > {T_MAJORITY}); mean paired (gaussian - t) {:.3e}",
                    mean(diffs)
                ),
            )],
            notes,
            table,
        })
    }
}

// ---------------------------------------------------------------- merge-eval

pub struct MergeEval;

static MERGE_COLUMNS: [Column; 8] = [
    ("trial", "-"),
    ("task_seed", "-"),
    ("strategy", "-"),
    ("status", "-"),
    ("mean_sigma", "-"),
    ("iou", "-"),
    ("zero_sigma_iou", "-"),
    ("zero_sigma_identical", "-"),
];

pub const MERGE_IOU_SLACK: f64 = 0.02;

fn selected_strategies(cfg: &ExperimentConfig) -> Result<Vec<&'static dyn MergeStrategy>, RunError> {
    if cfg.merge == "all" {
        Ok(merge::strategies().to_vec())
    } else {
        Ok(vec![merge::strategy(&cfg.merge).map_err(runtime)?])
    }
}

impl Experiment for MergeEval {
    fn name(&self) -> &'static str {
        "merge-eval"
    }

    fn columns(&self) -> &'static [Column] {
        &MERGE_COLUMNS
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
        let strategies = selected_strategies(cfg)?;
        let per_task = trials(cfg.trials, |t| {
            let task = task_for(cfg, t)?;
            let rec = train_variational(cfg, &task, t)?;
            let d: PromptDistribution = rec
                .final_distribution()
                .ok_or_else(|| runtime("variational run lacks a distribution"))?
                .map_err(runtime)?;
            let zero = d.clone().with_zero_scale();
            let infer_with = |dist: &PromptDistribution| {
                strategies
                    .iter()
                    .map(|s| {
                        // Every strategy sees the same K samples.
                        let mut rng = Rng::for_trial(cfg.seed, t as u64, Lane::Inference);
                        infer(dist, &task, *s, cfg.merge_samples, cfg.threshold, &mut rng)
                            .map_err(runtime)
                    })
                    .collect::<Result<Vec<_>, _>>()
            };
            let live = infer_with(&d)?;
            let flat = infer_with(&zero)?;
            let identical = flat.iter().all(|i| i.mask == flat[0].mask);
            Ok((task.spec.seed, rec, live, flat, identical))
        })?;
        let mut table = ResultTable::new(&MERGE_COLUMNS);
        for (t, (seed, rec, live, flat, identical)) in per_task.iter().enumerate() {
            for (i, s) in strategies.iter().enumerate() {
                table.push(vec![
                    t.into(),
                    (*seed).into(),
                    s.name().into(),
                    rec.status.label().into(),
                    mean_sigma(rec).into(),
                    live[i].iou.into(),
                    flat[i].iou.into(),
                    (*identical).into(),
                ]);
            }
        }
        let converged: Vec<_> = per_task.iter().filter(|p| p.1.status.is_ok()).collect();
        let means: Vec<(&str, f64)> = strategies
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name(), mean(converged.iter().map(|p| p.2[i].iou))))
            .collect();
        let mut verdicts = Vec::new();
        let mut notes = vec![format!(
            "mean IoU over {} converged tasks: {}",
            converged.len(),
            means
                .iter()
                .map(|(n, m)| format!("{n} {m:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        )];
        if let Some(&(_, base)) = means.iter().find(|(n, _)| *n == "mean-prompt-only") {
            let worst = means
                .iter()
                .map(|(_, m)| (m - base).abs())
                .fold(0.0f64, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
            verdicts.push(Verdict::new(
                "A9 strategies within 0.02 of mean-prompt-only",
                worst <= MERGE_IOU_SLACK && !converged.is_empty(),
                format!("largest |mean IoU - mean-prompt-only| = {worst:.4} (need <= {MERGE_IOU_SLACK})"),
            ));
        } else {
            notes.push("mean-prompt-only not selected; no baseline comparison".into());
        }
        let same = per_task.iter().filter(|p| p.4).count();
        verdicts.push(Verdict::new(
            "A9 zero-scale strategies identical",
            same == per_task.len(),
            format!("{same}/{} tasks with identical masks across strategies", per_task.len()),
        ));
        Ok(Outcome {
            table,
            verdicts,
            notes,
        })
    }
}

// ---------------------------------------------------------------- grad-check

pub struct GradCheck;

static GRAD_COLUMNS: [Column; 5] = [
    ("case", "-"),
    ("op", "-"),
    ("shape", "-"),
    ("rel_err", "-"),
    ("passed", "-"),
];

pub const MIN_GRAD_CASES: usize = 100;

impl Experiment for GradCheck {
    fn name(&self) -> &'static str {
        "grad-check"
    }

    fn columns(&self) -> &'static [Column] {
        &GRAD_COLUMNS
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
        let start = Instant::now();
        let cases = trials(cfg.trials, |i| grad_case(cfg.seed, i).map_err(runtime))?;
        let elapsed = start.elapsed();
        let mut table = ResultTable::new(&GRAD_COLUMNS);
        for c in &cases {
            let shape = c.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            table.push(vec![
                c.index.into(),
                c.op.into(),
                shape.into(),
                c.rel_err.into(),
                c.passed().into(),
            ]);
        }
        let ok = cases.iter().filter(|c| c.passed()).count();
        let worst = cases.iter().map(|c| c.rel_err).fold(0.0f64, f64::max);
        let ops = GRAD_OPS.len().min(cases.len());
        Ok(Outcome {
            verdicts: vec![Verdict::new(
                "A1 gradients match central differences",
                ok == cases.len() && cases.len() >= MIN_GRAD_CASES,
                format!(
                    "{ok}/{} cases over {ops} operations below 1e-5 (need >= {MIN_GRAD_CASES} cases); worst {worst:.3e}",
                    cases.len()
                ),
            )],
            notes: vec![format!("wall time {:.2} s", elapsed.as_secs_f64())],
            table,
        })
    }
}
