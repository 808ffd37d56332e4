//! Analytic loss landscapes with a known basin center and radius, so the
//! claim that variational optimization lands closer to the center of the
//! acceptable region can be measured exactly.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dist::DistError;
use crate::objective::Objective;
use crate::optim::{
    optimize_vanilla_from, optimize_variational_from, OptimError, TrainConfig, TrialStatus,
    VariationalConfig,
};
use crate::rng::{Lane, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor, TensorError};
use crate::dist::PromptDistribution;

pub const DEFAULT_RADIUS: f64 = 3.0;
pub const DEFAULT_SHARPNESS: f64 = 8.0;
pub const DEFAULT_DIM: usize = 8;
/// Long-axis stretch of the asymmetric valley.
pub const VALLEY_STRETCH: f64 = 3.0;
/// Plateau offset of the shallower basin in the multi-basin landscape.
pub const SECOND_BASIN_DEPTH: f64 = 0.5;
const SMOOTH_MIN_TEMPERATURE: f64 = 20.0;
pub const MIN_STUDY_TRIALS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandscapeError {
    #[error("invalid landscape parameter: {0}")]
    InvalidParam(String),
    #[error("unknown landscape `{0}`")]
    Unknown(String),
    #[error("need at least 3 points to project, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

pub type Result<T> = std::result::Result<T, LandscapeError>;

/// A smooth objective over a `1 × n` row with a known basin.
pub trait Landscape: Objective {
    fn family(&self) -> &'static str;
    fn center(&self) -> &Tensor;
    fn basin_radius(&self) -> f64;
    /// How far above the global minimum the flat part of the basin may sit;
    /// the tolerance for basin-optimality checks.
    fn plateau_depth(&self) -> f64;
    /// Index of the basin containing `z`, if any.
    fn basin_of(&self, z: &Tensor) -> Option<usize>;
    /// The same landscape moved by `shift`.
    fn translated(&self, shift: &Tensor) -> Result<Box<dyn Landscape>>;

    fn dim(&self) -> usize {
        self.center().len()
    }
}

fn check_center(center: &Tensor) -> Result<Tensor> {
    if center.is_empty() {
        return Err(LandscapeError::InvalidParam("empty center".into()));
    }
    Ok(center.reshape(vec![1, center.len()])?)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(LandscapeError::InvalidParam(format!("{name} must be > 0, got {v}")))
    }
}

fn shifted_center(c: &Tensor, shift: &Tensor) -> Result<Tensor> {
    if shift.len() != c.len() {
        return Err(TensorError::ShapeMismatch {
            lhs: c.shape().to_vec(),
            rhs: shift.shape().to_vec(),
        }
        .into());
    }
    Ok(Tensor::new(
        c.shape().to_vec(),
        c.data().iter().zip(shift.data()).map(|(a, b)| a + b).collect(),
    )?)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn finite(v: f64, what: &'static str) -> tensor::Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TensorError::NonFinite(what))
    }
}

/// `softplus(β(‖z − c‖ − r))`: essentially zero inside the ball, linear
/// growth outside.
#[derive(Debug, Clone)]
pub struct PlateauBall {
    center: Tensor,
    radius: f64,
    sharpness: f64,
}

pub fn plateau_ball(center: &Tensor, radius: f64, sharpness: f64) -> Result<PlateauBall> {
    check_positive("radius", radius)?;
    check_positive("sharpness", sharpness)?;
    Ok(PlateauBall {
        center: check_center(center)?,
        radius,
        sharpness,
    })
}

impl PlateauBall {
    fn raw(&self, z: &[f64]) -> f64 {
        softplus(self.sharpness * (distance(z, self.center.data()) - self.radius))
    }
}

impl Objective for PlateauBall {
    fn name(&self) -> &str {
        "plateau-ball"
    }

    fn shape(&self) -> (usize, usize) {
        (1, self.center.len())
    }

    fn loss<'t>(&self, tape: &'t Tape, z: Var<'t>) -> tensor::Result<Var<'t>> {
        let c = tape.constant(self.center.clone());
        z.sub(c)?
            .norm()?
            .add_scalar(-self.radius)?
            .mul_scalar(self.sharpness)?
            .softplus()?
            .sum()
    }

    fn value(&self, z: &Tensor) -> tensor::Result<f64> {
        finite(self.raw(z.data()), "plateau-ball value")
    }
}

impl Landscape for PlateauBall {
    fn family(&self) -> &'static str {
        "plateau-ball"
    }

    fn center(&self) -> &Tensor {
        &self.center
    }

    fn basin_radius(&self) -> f64 {
        self.radius
    }

    fn plateau_depth(&self) -> f64 {
        softplus(-self.sharpness * self.radius)
    }

    fn basin_of(&self, z: &Tensor) -> Option<usize> {
        (distance(z.data(), self.center.data()) <= self.radius).then_some(0)
    }

    fn translated(&self, shift: &Tensor) -> Result<Box<dyn Landscape>> {
        Ok(Box::new(Self {
            center: shifted_center(&self.center, shift)?,
            ..self.clone()
        }))
    }
}

/// `½·‖z − c‖²`; strictly convex, so every method should find `c`.
#[derive(Debug, Clone)]
pub struct QuadraticWell {
    center: Tensor,
    radius: f64,
}

pub fn quadratic_well(center: &Tensor, radius: f64) -> Result<QuadraticWell> {
    check_positive("radius", radius)?;
    Ok(QuadraticWell {
        center: check_center(center)?,
        radius,
    })
}

impl Objective for QuadraticWell {
    fn name(&self) -> &str {
        "quadratic-well"
    }

    fn shape(&self) -> (usize, usize) {
        (1, self.center.len())
    }

    fn loss<'t>(&self, tape: &'t Tape, z: Var<'t>) -> tensor::Result<Var<'t>> {
        let c = tape.constant(self.center.clone());
        z.sub(c)?.square()?.sum()?.mul_scalar(0.5)
    }

    fn value(&self, z: &Tensor) -> tensor::Result<f64> {
        let d = distance(z.data(), self.center.data());
        finite(0.5 * d * d, "quadratic-well value")
    }
}

impl Landscape for QuadraticWell {
    fn family(&self) -> &'static str {
        "quadratic-well"
    }

    fn center(&self) -> &Tensor {
        &self.center
    }

    /// Radius of the sublevel set `f ≤ ½r²`.
    fn basin_radius(&self) -> f64 {
        self.radius
    }

    fn plateau_depth(&self) -> f64 {
        0.0
    }

    fn basin_of(&self, z: &Tensor) -> Option<usize> {
        (distance(z.data(), self.center.data()) <= self.radius).then_some(0)
    }

    fn translated(&self, shift: &Tensor) -> Result<Box<dyn Landscape>> {
        Ok(Box::new(Self {
            center: shifted_center(&self.center, shift)?,
            ..self.clone()
        }))
    }
}

/// A plateau whose basin is an ellipsoid stretched along the first axis by
/// [`VALLEY_STRETCH`]: walls are near along every axis but one.
#[derive(Debug, Clone)]
pub struct AsymmetricValley {
    center: Tensor,
    radius: f64,
    sharpness: f64,
    scales: Tensor,
}

pub fn asymmetric_valley(center: &Tensor, radius: f64, sharpness: f64) -> Result<AsymmetricValley> {
    check_positive("radius", radius)?;
    check_positive("sharpness", sharpness)?;
    let center = check_center(center)?;
    let mut scales = vec![1.0; center.len()];
    scales[0] = 1.0 / VALLEY_STRETCH;
    Ok(AsymmetricValley {
        scales: Tensor::new(vec![1, center.len()], scales)?,
        center,
        radius,
        sharpness,
    })
}

impl AsymmetricValley {
    fn scaled_distance(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(self.center.data())
            .zip(self.scales.data())
            .map(|((a, c), s)| (s * (a - c)).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl Objective for AsymmetricValley {
    fn name(&self) -> &str {
        "asymmetric-valley"
    }

    fn shape(&self) -> (usize, usize) {
        (1, self.center.len())
    }

    fn loss<'t>(&self, tape: &'t Tape, z: Var<'t>) -> tensor::Result<Var<'t>> {
        let c = tape.constant(self.center.clone());
        let s = tape.constant(self.scales.clone());
        z.sub(c)?
            .mul(s)?
            .norm()?
            .add_scalar(-self.radius)?
            .mul_scalar(self.sharpness)?
            .softplus()?
            .sum()
    }

    fn value(&self, z: &Tensor) -> tensor::Result<f64> {
        finite(
            softplus(self.sharpness * (self.scaled_distance(z.data()) - self.radius)),
            "asymmetric-valley value",
        )
    }
}

impl Landscape for AsymmetricValley {
    fn family(&self) -> &'static str {
        "asymmetric-valley"
    }

    fn center(&self) -> &Tensor {
        &self.center
    }

    /// The short semi-axis; the long one is `VALLEY_STRETCH` times larger.
    fn basin_radius(&self) -> f64 {
        self.radius
    }

    fn plateau_depth(&self) -> f64 {
        softplus(-self.sharpness * self.radius)
    }

    fn basin_of(&self, z: &Tensor) -> Option<usize> {
        (self.scaled_distance(z.data()) <= self.radius).then_some(0)
    }

    fn translated(&self, shift: &Tensor) -> Result<Box<dyn Landscape>> {
        Ok(Box::new(Self {
            center: shifted_center(&self.center, shift)?,
            ..self.clone()
        }))
    }
}

/// Two plateau balls of equal radius, four radii apart along the first axis,
/// combined by a smooth minimum. The basin at `center` is the deeper one; the
/// other sits [`SECOND_BASIN_DEPTH`] higher.
#[derive(Debug, Clone)]
pub struct MultiBasin {
    centers: Vec<Tensor>,
    depths: Vec<f64>,
    radius: f64,
    sharpness: f64,
}

pub fn multi_basin(center: &Tensor, radius: f64, sharpness: f64) -> Result<MultiBasin> {
    check_positive("radius", radius)?;
    check_positive("sharpness", sharpness)?;
    let c0 = check_center(center)?;
    let mut c1 = c0.clone();
    c1.data_mut()[0] += 4.0 * radius;
    Ok(MultiBasin {
        centers: vec![c0, c1],
        depths: vec![0.0, SECOND_BASIN_DEPTH],
        radius,
        sharpness,
    })
}

impl MultiBasin {
    pub fn centers(&self) -> &[Tensor] {
        &self.centers
    }
}

impl Objective for MultiBasin {
    fn name(&self) -> &str {
        "multi-basin"
    }

    fn shape(&self) -> (usize, usize) {
        (1, self.centers[0].len())
    }

    fn loss<'t>(&self, tape: &'t Tape, z: Var<'t>) -> tensor::Result<Var<'t>> {
        let k = SMOOTH_MIN_TEMPERATURE;
        // −(1/κ) log Σ_j exp(−κ(p_j + d_j)), shifted by the smallest term so the
        // exponentials cannot underflow to a zero sum.
        let terms = self
            .centers
            .iter()
            .zip(&self.depths)
            .map(|(c, d)| {
                z.sub(tape.constant(c.clone()))?
                    .norm()?
                    .add_scalar(-self.radius)?
                    .mul_scalar(self.sharpness)?
                    .softplus()?
                    .add_scalar(*d)
            })
            .collect::<tensor::Result<Vec<_>>>()?;
        let low = terms
            .iter()
            .map(|t| t.item())
            .fold(f64::INFINITY, f64::min);
        let mut acc: Option<Var<'t>> = None;
        for t in &terms {
            let e = t.add_scalar(-low)?.mul_scalar(-k)?.exp()?;
            acc = Some(match acc {
                None => e,
                Some(a) => a.add(e)?,
            });
        }
        let acc = acc.expect("at least one basin");
        acc.log()?.mul_scalar(-1.0 / k)?.add_scalar(low)?.sum()
    }

    fn value(&self, z: &Tensor) -> tensor::Result<f64> {
        let k = SMOOTH_MIN_TEMPERATURE;
        let terms: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.depths)
            .map(|(c, d)| softplus(self.sharpness * (distance(z.data(), c.data()) - self.radius)) + d)
            .collect();
        let low = terms.iter().copied().fold(f64::INFINITY, f64::min);
        let s: f64 = terms.iter().map(|t| (-k * (t - low)).exp()).sum();
        finite(low - s.ln() / k, "multi-basin value")
    }
}

impl Landscape for MultiBasin {
    fn family(&self) -> &'static str {
        "multi-basin"
    }

    fn center(&self) -> &Tensor {
        &self.centers[0]
    }

    fn basin_radius(&self) -> f64 {
        self.radius
    }

    /// Covers the plateau itself plus the smooth-minimum offset.
    fn plateau_depth(&self) -> f64 {
        softplus(-self.sharpness * self.radius) + (self.centers.len() as f64).ln() / SMOOTH_MIN_TEMPERATURE
    }

    fn basin_of(&self, z: &Tensor) -> Option<usize> {
        self.centers
            .iter()
            .position(|c| distance(z.data(), c.data()) <= self.radius)
    }

    fn translated(&self, shift: &Tensor) -> Result<Box<dyn Landscape>> {
        Ok(Box::new(Self {
            centers: self
                .centers
                .iter()
                .map(|c| shifted_center(c, shift))
                .collect::<Result<_>>()?,
            ..self.clone()
        }))
    }
}

pub const LANDSCAPES: [&str; 4] = ["plateau-ball", "quadratic-well", "asymmetric-valley", "multi-basin"];

/// Builds a registered landscape with default radius and sharpness.
pub fn landscape(name: &str, center: &Tensor) -> Result<Box<dyn Landscape>> {
    landscape_with(name, center, DEFAULT_RADIUS, DEFAULT_SHARPNESS)
}

pub fn landscape_with(
    name: &str,
    center: &Tensor,
    radius: f64,
    sharpness: f64,
) -> Result<Box<dyn Landscape>> {
    Ok(match name {
        "plateau-ball" => Box::new(plateau_ball(center, radius, sharpness)?),
        "quadratic-well" => Box::new(quadratic_well(center, radius)?),
        "asymmetric-valley" => Box::new(asymmetric_valley(center, radius, sharpness)?),
        "multi-basin" => Box::new(multi_basin(center, radius, sharpness)?),
        other => return Err(LandscapeError::Unknown(other.to_string())),
    })
}

/// `‖z − center‖`.
pub fn center_distance(z: &Tensor, l: &dyn Landscape) -> Result<f64> {
    if z.len() != l.dim() {
        return Err(TensorError::ShapeMismatch {
            lhs: z.shape().to_vec(),
            rhs: l.center().shape().to_vec(),
        }
        .into());
    }
    Ok(distance(z.data(), l.center().data()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub train: TrainConfig,
    pub variational: VariationalConfig,
    /// Initial points are `center + init_std · N(0, I)`.
    pub init_std: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            variational: VariationalConfig::default(),
            init_std: crate::optim::DEFAULT_INIT_STD,
        }
    }
}

/// One paired run: vanilla and variational from the same starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterSeekingRow {
    pub trial: u64,
    pub vanilla_point: Tensor,
    pub variational_point: Tensor,
    pub vanilla_distance: f64,
    pub variational_distance: f64,
    /// `basin_radius − distance`; negative outside the basin.
    pub vanilla_margin: f64,
    pub variational_margin: f64,
    pub vanilla_basin: Option<usize>,
    pub variational_basin: Option<usize>,
    pub vanilla_status: TrialStatus,
    pub variational_status: TrialStatus,
    pub vanilla_epochs: usize,
    pub variational_epochs: usize,
    pub final_sigma: f64,
}

impl CenterSeekingRow {
    pub fn variational_closer(&self) -> bool {
        self.variational_distance < self.vanilla_distance
    }

    pub fn diverged(&self) -> bool {
        !self.vanilla_status.is_ok() || !self.variational_status.is_ok()
    }
}

/// Runs trial `trial` of a center-seeking study. The start point comes from
/// the trial's init lane and the Monte Carlo noise from its noise lane, so
/// trials are independent of scheduling.
pub fn center_seeking_trial(
    l: &dyn Landscape,
    seed: u64,
    trial: u64,
    cfg: &StudyConfig,
) -> Result<CenterSeekingRow> {
    let mut init = Rng::for_trial(seed, trial, Lane::Init);
    let n = l.dim();
    let offset = init.normal(vec![1, n]);
    let z0 = Tensor::new(
        vec![1, n],
        l.center()
            .data()
            .iter()
            .zip(offset.data())
            .map(|(c, e)| c + cfg.init_std * e)
            .collect(),
    )?;
    let vanilla = optimize_vanilla_from(l, z0.clone(), &init, &cfg.train)?;
    let v = &cfg.variational;
    let mut d = PromptDistribution::new(z0, v.nu, v.family)?;
    if v.zero_scale {
        d = d.with_zero_scale();
    }
    let mut noise = Rng::for_trial(seed, trial, Lane::Noise);
    let var = optimize_variational_from(l, d, &mut noise, &cfg.train, v.mc_samples, v.antithetic)?;
    let sigma = var
        .final_log_sigma
        .as_ref()
        .map(|ls| ls.data().iter().map(|x| x.exp()).sum::<f64>() / ls.len() as f64)
        .unwrap_or(0.0);
    let vd = center_distance(&vanilla.final_z, l)?;
    let wd = center_distance(&var.final_z, l)?;
    Ok(CenterSeekingRow {
        trial,
        vanilla_distance: vd,
        variational_distance: wd,
        vanilla_margin: l.basin_radius() - vd,
        variational_margin: l.basin_radius() - wd,
        vanilla_basin: l.basin_of(&vanilla.final_z),
        variational_basin: l.basin_of(&var.final_z),
        vanilla_status: vanilla.status,
        variational_status: var.status,
        vanilla_epochs: vanilla.epochs_run,
        variational_epochs: var.epochs_run,
        vanilla_point: vanilla.final_z,
        variational_point: var.final_z,
        final_sigma: if v.zero_scale { 0.0 } else { sigma },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterSeekingSummary {
    pub trials: usize,
    pub fraction_variational_closer: f64,
    pub mean_vanilla_distance: f64,
    pub mean_variational_distance: f64,
    pub mean_vanilla_margin: f64,
    pub mean_variational_margin: f64,
    pub divergences: usize,
}

pub fn summarize(rows: &[CenterSeekingRow]) -> CenterSeekingSummary {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&CenterSeekingRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    CenterSeekingSummary {
        trials: rows.len(),
        fraction_variational_closer: rows.iter().filter(|r| r.variational_closer()).count() as f64 / n,
        mean_vanilla_distance: mean(|r| r.vanilla_distance),
        mean_variational_distance: mean(|r| r.variational_distance),
        mean_vanilla_margin: mean(|r| r.vanilla_margin),
        mean_variational_margin: mean(|r| r.variational_margin),
        divergences: rows.iter().filter(|r| r.diverged()).count(),
    }
}

/// Sequential paired study over trials `0..trials`.
pub fn center_seeking_study(
    l: &dyn Landscape,
    trials: usize,
    seed: u64,
    cfg: &StudyConfig,
) -> Result<(Vec<CenterSeekingRow>, CenterSeekingSummary)> {
    if trials < MIN_STUDY_TRIALS {
        return Err(LandscapeError::InvalidParam(format!(
            "center-seeking study needs at least {MIN_STUDY_TRIALS} trials, got {trials}"
        )));
    }
    let rows = (0..trials as u64)
        .map(|t| center_seeking_trial(l, seed, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows);
    Ok((rows, summary))
}

/// Points projected onto the top two principal components of their centered
/// cloud. Each axis is signed so its largest-magnitude loading is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    /// Set when the cloud has rank < 2; the second coordinate is then zero.
    pub degenerate: bool,
}

/// Deterministic stand-in for a t-SNE embedding of prompt clouds.
pub fn pca_project(points: &[Tensor]) -> Result<Projection> {
    if points.len() < 3 {
        return Err(LandscapeError::TooFewPoints(points.len()));
    }
    let n = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != n) {
        return Err(TensorError::ShapeMismatch {
            lhs: points[0].shape().to_vec(),
            rhs: bad.shape().to_vec(),
        }
        .into());
    }
    let k = points.len();
    let mut x = DMatrix::from_fn(k, n, |i, j| points[i].data()[j]);
    for j in 0..n {
        let m = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-m);
    }
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = svd.singular_values[order[0]].max(f64::MIN_POSITIVE);
    let tol = top * 1e-10 * (k.max(n) as f64);
    let mut axes = Vec::with_capacity(2);
    let mut degenerate = false;
    for &idx in order.iter().take(2) {
        if svd.singular_values[idx] <= tol {
            degenerate = true;
            continue;
        }
        let mut axis: Vec<f64> = vt.row(idx).iter().copied().collect();
        let lead = axis
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        axes.push(axis);
    }
    if axes.len() < 2 {
        degenerate = true;
    }
    let coords = (0..k)
        .map(|i| {
            let row = x.row(i);
            let mut c = [0.0; 2];
            for (slot, axis) in c.iter_mut().zip(&axes) {
                *slot = row.iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            c
        })
        .collect();
    Ok(Projection { coords, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin(n: usize) -> Tensor {
        Tensor::zeros(vec![1, n])
    }

    #[test]
    fn plateau_ball_values() {
        let l = plateau_ball(&origin(4), 3.0, 8.0).unwrap();
        let at_center = l.value(&origin(4)).unwrap();
        assert!(at_center < 1e-10 && at_center > 0.0);
        let mut on_sphere = origin(4);
        on_sphere.data_mut()[2] = 3.0;
        assert!((l.value(&on_sphere).unwrap() - 2f64.ln()).abs() < 1e-15);
        let (_, g) = l.value_and_grad(&origin(4)).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tape_matches_plain_values() {
        let mut rng = Rng::new(11, 0);
        let c = rng.normal(vec![1, 5]);
        for name in LANDSCAPES {
            let l = landscape(name, &c).unwrap();
            for _ in 0..20 {
                let z = rng.normal(vec![1, 5]).map(|v| 4.0 * v).unwrap();
                let (tv, _) = l.value_and_grad(&z).unwrap();
                let pv = l.value(&z).unwrap();
                assert!((tv - pv).abs() <= 1e-12 * (1.0 + pv.abs()), "{name}: {tv} vs {pv}");
            }
        }
    }

    #[test]
    fn invalid_params() {
        assert!(plateau_ball(&origin(2), 0.0, 1.0).is_err());
        assert!(plateau_ball(&origin(2), 1.0, -1.0).is_err());
        assert!(matches!(landscape("nope", &origin(2)), Err(LandscapeError::Unknown(_))));
    }

    #[test]
    fn distance_basics() {
        let l = plateau_ball(&origin(3), 3.0, 8.0).unwrap();
        assert_eq!(center_distance(&origin(3), &l).unwrap(), 0.0);
        let b = Tensor::matrix(1, 3, vec![0.0, 3.0, 0.0]).unwrap();
        assert_eq!(center_distance(&b, &l).unwrap(), 3.0);
        assert!(center_distance(&origin(2), &l).is_err());
    }

    #[test]
    fn multi_basin_reports_basin() {
        let l = multi_basin(&origin(2), 1.0, 8.0).unwrap();
        let far = Tensor::matrix(1, 2, vec![4.0, 0.0]).unwrap();
        assert_eq!(l.basin_of(&origin(2)), Some(0));
        assert_eq!(l.basin_of(&far), Some(1));
        assert!(l.value(&origin(2)).unwrap() < l.value(&far).unwrap());
    }

    #[test]
    fn pca_of_2d_points_preserves_distances() {
        let pts: Vec<Tensor> = [[0.0, 0.0], [3.0, 1.0], [-1.0, 2.0], [4.0, -2.0]]
            .iter()
            .map(|p| Tensor::vector(p.to_vec()).unwrap())
            .collect();
        let proj = pca_project(&pts).unwrap();
        assert!(!proj.degenerate);
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let a = distance(pts[i].data(), pts[j].data());
                let b = distance(&proj.coords[i], &proj.coords[j]);
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pca_of_collinear_points() {
        let pts: Vec<Tensor> = (0..5)
            .map(|i| Tensor::vector(vec![i as f64, 2.0 * i as f64, -(i as f64)]).unwrap())
            .collect();
        let proj = pca_project(&pts).unwrap();
        assert!(proj.degenerate);
        assert!(proj.coords.iter().all(|c| c[1] == 0.0));
        assert!(matches!(pca_project(&pts[..2]), Err(LandscapeError::TooFewPoints(2))));
    }
}
