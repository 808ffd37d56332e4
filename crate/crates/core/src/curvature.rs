//! Second-order structure of objectives: finite-difference Laplacians and
//! Hessians, Hutchinson trace estimates, and Monte Carlo checks of the
//! small-noise expansion
//!
//! ```text
//! E[f(z + ε)] = f(z) + σ²/2 · Δf(z) + O(σ³),   E[ε] = 0, E[εεᵀ] = σ²I.
//! ```
//!
//! Every Monte Carlo quantity comes with a standard error; comparisons are made
//! in units of it.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::objective::Objective;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Second-difference step for smooth analytic functions.
pub const ANALYTIC_STEP: f64 = 1e-4;
/// Second-difference step for mask losses and landscapes.
pub const LANDSCAPE_STEP: f64 = 1e-3;
pub const MAX_HESSIAN_DIM: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurvatureError {
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("residuals are below the Monte Carlo noise floor at every sigma")]
    InsufficientSignal(Vec<ScalingRow>),
    #[error(transparent)]
    Tensor(TensorError),
}

impl From<TensorError> for CurvatureError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite(what) => Self::NonFinite(what.to_string()),
            other => Self::Tensor(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, CurvatureError>;

/// Mean of i.i.d. draws with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl Estimate {
    pub fn from_samples(xs: impl IntoIterator<Item = f64>) -> Self {
        // Welford keeps the variance accurate when the mean dwarfs the spread.
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for x in xs {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            std_error: (var / n.max(1) as f64).sqrt(),
            count: n,
        }
    }

    /// `|mean − target| ≤ k · std_error`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

fn eval(f: &dyn Objective, z: &Tensor) -> Result<f64> {
    let v = f.value(z)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CurvatureError::NonFinite(format!("{} at evaluation point", f.name())))
    }
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(CurvatureError::InvalidParam(format!("step h must be > 0, got {h}")))
    }
}

fn shifted(z: &Tensor, dir: &[f64], scale: f64) -> Tensor {
    let data = z.data().iter().zip(dir).map(|(a, d)| a + scale * d).collect();
    Tensor::from_parts(z.shape().to_vec(), data)
}

/// `Σᵢ [f(z+h·eᵢ) − 2f(z) + f(z−h·eᵢ)] / h²`, using `2n + 1` evaluations.
pub fn laplacian_fd(f: &dyn Objective, z: &Tensor, h: f64) -> Result<f64> {
    check_step(h)?;
    let f0 = eval(f, z)?;
    let mut x = z.clone();
    let mut total = 0.0;
    for i in 0..z.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let fp = eval(f, &x)?;
        x.data_mut()[i] = orig - h;
        let fm = eval(f, &x)?;
        x.data_mut()[i] = orig;
        total += (fp - 2.0 * f0 + fm) / (h * h);
    }
    Ok(total)
}

fn grad(f: &dyn Objective, z: &Tensor) -> Result<Vec<f64>> {
    let (_, g) = f.value_and_grad(z)?;
    Ok(g.into_data())
}

/// Hessian as an `n × n` matrix from central differences of autodiff
/// gradients, symmetrized. Only for small `n` (debugging and control variates).
pub fn hessian_fd(f: &dyn Objective, z: &Tensor, h: f64) -> Result<Tensor> {
    check_step(h)?;
    let n = z.len();
    if n > MAX_HESSIAN_DIM {
        return Err(CurvatureError::InvalidParam(format!(
            "dense Hessian limited to n <= {MAX_HESSIAN_DIM}, got {n}"
        )));
    }
    let mut cols = vec![0.0; n * n];
    let mut x = z.clone();
    for j in 0..n {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + h;
        let gp = grad(f, &x)?;
        x.data_mut()[j] = orig - h;
        let gm = grad(f, &x)?;
        x.data_mut()[j] = orig;
        for i in 0..n {
            cols[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = 0.5 * (cols[i * n + j] + cols[j * n + i]);
        }
    }
    Ok(Tensor::new(vec![n, n], sym)?)
}

/// Hutchinson estimate of `tr(∇²f(z))` with Rademacher probes, each
/// Hessian-vector product taken as a central difference of gradients.
pub fn hutchinson_trace(
    f: &dyn Objective,
    z: &Tensor,
    h: f64,
    num_probes: usize,
    rng: &mut Rng,
) -> Result<Estimate> {
    check_step(h)?;
    if num_probes < 2 {
        return Err(CurvatureError::InvalidParam("num_probes must be >= 2".into()));
    }
    let mut samples = Vec::with_capacity(num_probes);
    for _ in 0..num_probes {
        let v: Vec<f64> = (0..z.len()).map(|_| rng.rademacher()).collect();
        let gp = grad(f, &shifted(z, &v, h))?;
        let gm = grad(f, &shifted(z, &v, -h))?;
        let vhv: f64 = v
            .iter()
            .zip(gp.iter().zip(&gm))
            .map(|(vi, (p, m))| vi * (p - m) / (2.0 * h))
            .sum();
        samples.push(vhv);
    }
    Ok(Estimate::from_samples(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseShape {
    #[default]
    Gaussian,
    /// Uniform on the ball of radius `σ√(n+2)`, which has covariance `σ²I`.
    UniformBall,
}

impl NoiseShape {
    fn draw(self, rng: &mut Rng, n: usize, sigma: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|e| *e = rng.standard_normal());
        match self {
            Self::Gaussian => out.iter_mut().for_each(|e| *e *= sigma),
            Self::UniformBall => {
                let norm = out.iter().map(|e| e * e).sum::<f64>().sqrt();
                let r = sigma * ((n + 2) as f64).sqrt() * rng.uniform().powf(1.0 / n as f64);
                out.iter_mut().for_each(|e| *e *= r / norm);
            }
        }
    }
}

impl fmt::Display for NoiseShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::UniformBall => "uniform-ball",
        })
    }
}

impl FromStr for NoiseShape {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "uniform-ball" => Ok(Self::UniformBall),
            other => Err(format!("unknown noise shape `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop1Options {
    pub noise: NoiseShape,
    /// Evaluate `±ε` pairs; `num_samples` then counts pairs.
    pub antithetic: bool,
    /// Subtract `½εᵀHε` (dense FD Hessian, `n ≤ 32`) from every draw and add
    /// back its exact mean `σ²/2·tr H`. Unbiased for any `H`; it removes the
    /// σ² part of the sample variance so small residuals become measurable.
    pub control_variate: bool,
    pub h: f64,
}

impl Default for Prop1Options {
    fn default() -> Self {
        Self {
            noise: NoiseShape::Gaussian,
            antithetic: false,
            control_variate: false,
            h: ANALYTIC_STEP,
        }
    }
}

impl Prop1Options {
    pub fn residual_study() -> Self {
        Self {
            antithetic: true,
            control_variate: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub z: Tensor,
    pub sigma: f64,
    pub laplacian_fd: f64,
    pub laplacian_hutchinson: Option<Estimate>,
    /// Estimate of `E[f(z+ε)] − f(z)`.
    pub noise_gap: Estimate,
    /// `noise_gap − σ²/2 · laplacian_fd`; its standard error is the gap's.
    pub residual: f64,
    pub options: Prop1Options,
}

impl CurvatureReport {
    pub fn predicted_gap(&self) -> f64 {
        0.5 * self.sigma * self.sigma * self.laplacian_fd
    }

    pub fn residual_std_error(&self) -> f64 {
        self.noise_gap.std_error
    }

    pub fn residual_within(&self, k: f64) -> bool {
        self.residual.abs() <= k * self.residual_std_error()
    }

    pub fn with_hutchinson(mut self, est: Estimate) -> Self {
        self.laplacian_hutchinson = Some(est);
        self
    }
}

/// Monte Carlo check of the expansion at one `σ`.
pub fn verify_prop1(
    f: &dyn Objective,
    z: &Tensor,
    sigma: f64,
    num_samples: usize,
    rng: &mut Rng,
    opts: Prop1Options,
) -> Result<CurvatureReport> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CurvatureError::InvalidParam(format!("sigma must be > 0, got {sigma}")));
    }
    if num_samples < 2 {
        return Err(CurvatureError::InvalidParam("num_samples must be >= 2".into()));
    }
    let n = z.len();
    let f0 = eval(f, z)?;
    let lap = laplacian_fd(f, z, opts.h)?;
    let hess = if opts.control_variate {
        Some(hessian_fd(f, z, opts.h)?)
    } else {
        None
    };
    let mut eps = vec![0.0; n];
    let mut hv = vec![0.0; n];
    let mut samples = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        opts.noise.draw(rng, n, sigma, &mut eps);
        let fp = eval(f, &shifted(z, &eps, 1.0))?;
        let mut g = if opts.antithetic {
            let fm = eval(f, &shifted(z, &eps, -1.0))?;
            0.5 * (fp + fm) - f0
        } else {
            fp - f0
        };
        if let Some(h) = &hess {
            let hd = h.data();
            for (i, slot) in hv.iter_mut().enumerate() {
                *slot = (0..n).map(|j| hd[i * n + j] * eps[j]).sum();
            }
            g -= 0.5 * eps.iter().zip(&hv).map(|(a, b)| a * b).sum::<f64>();
        }
        samples.push(g);
    }
    let mut gap = Estimate::from_samples(samples);
    if let Some(h) = &hess {
        let tr: f64 = (0..n).map(|i| h.data()[i * n + i]).sum();
        gap.mean += 0.5 * sigma * sigma * tr;
    }
    let residual = gap.mean - 0.5 * sigma * sigma * lap;
    Ok(CurvatureReport {
        z: z.clone(),
        sigma,
        laplacian_fd: lap,
        laplacian_hutchinson: None,
        noise_gap: gap,
        residual,
        options: opts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub sigma: f64,
    pub residual: f64,
    pub std_error: f64,
    /// Below this `|residual|` is indistinguishable from Monte Carlo noise or
    /// rounding.
    pub floor: f64,
}

impl ScalingRow {
    pub fn resolved(&self) -> bool {
        self.residual.abs() > self.floor
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingVerdict {
    /// Log–log slope of `|residual|` against `σ` over the resolved rows.
    Slope(f64),
    /// Residuals vanish to rounding at every `σ` (quadratics).
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub verdict: ScalingVerdict,
}

impl ScalingReport {
    pub fn slope(&self) -> Option<f64> {
        match self.verdict {
            ScalingVerdict::Slope(s) => Some(s),
            ScalingVerdict::Exact => None,
        }
    }
}

fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x.ln(), b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in points {
        let dx = x.ln() - mx;
        sxy += dx * (y.ln() - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Residual of the expansion across several `σ`, with the log–log slope fitted
/// over the rows whose residual clears `max(3·SE, rounding)`.
pub fn scaling_study(
    f: &dyn Objective,
    z: &Tensor,
    sigmas: &[f64],
    num_samples: usize,
    rng: &mut Rng,
    opts: Prop1Options,
) -> Result<ScalingReport> {
    if sigmas.len() < 4 {
        return Err(CurvatureError::InvalidParam("need at least 4 sigma values".into()));
    }
    let (lo, hi) = sigmas
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &s| (l.min(s), h.max(s)));
    if hi / lo < 10.0 - 1e-9 {
        return Err(CurvatureError::InvalidParam("sigmas must span at least one decade".into()));
    }
    let f0 = eval(f, z)?.abs();
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let r = verify_prop1(f, z, sigma, num_samples, rng, opts)?;
        let scale = f0 + r.noise_gap.mean.abs() + r.predicted_gap().abs();
        // Second differences carry ~4ε|f|/h² rounding per coordinate, which
        // enters the residual through the σ²/2 factor.
        let lap_rounding = 8.0 * z.len() as f64 * f64::EPSILON * f0.max(1.0) / (opts.h * opts.h);
        let rounding = 1e3 * f64::EPSILON * scale.max(f64::MIN_POSITIVE)
            + 0.5 * sigma * sigma * lap_rounding;
        rows.push(ScalingRow {
            sigma,
            residual: r.residual,
            std_error: r.residual_std_error(),
            floor: (3.0 * r.residual_std_error()).max(rounding),
        });
    }
    let resolved: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.resolved())
        .map(|r| (r.sigma, r.residual.abs()))
        .collect();
    if resolved.len() >= 2 {
        let slope = loglog_slope(&resolved);
        return Ok(ScalingReport {
            rows,
            verdict: ScalingVerdict::Slope(slope),
        });
    }
    let exact = rows.iter().all(|r| r.std_error <= r.floor / 3.0 && !r.resolved());
    if exact {
        Ok(ScalingReport {
            rows,
            verdict: ScalingVerdict::Exact,
        })
    } else {
        Err(CurvatureError::InsufficientSignal(rows))
    }
}

/// Laplacian of an objective at `z` with the landscape step; used to compare
/// the flatness of learned prompts.
pub fn flatness_at(obj: &dyn Objective, z: &Tensor) -> Result<f64> {
    if z.data().iter().any(|v| !v.is_finite()) {
        return Err(CurvatureError::NonFinite("prompt".into()));
    }
    laplacian_fd(obj, z, LANDSCAPE_STEP)
}

/// `½ zᵀAz` for a symmetric `A`, with `z` a `1 × n` row.
pub struct QuadraticForm {
    a: Tensor,
}

impl QuadraticForm {
    pub fn new(a: Tensor) -> Result<Self> {
        if a.rank() != 2 || a.rows() != a.cols() {
            return Err(CurvatureError::InvalidParam("A must be square".into()));
        }
        Ok(Self { a })
    }

    /// `A = (B + Bᵀ)/2` with `B` standard normal.
    pub fn random(n: usize, rng: &mut Rng) -> Self {
        let b = rng.normal(vec![n, n]);
        let bt = b.transpose().expect("square");
        let a = b.zip_map(&bt, |x, y| 0.5 * (x + y)).expect("same shape");
        Self { a }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.a
    }

    pub fn trace(&self) -> f64 {
        (0..self.a.rows()).map(|i| self.a.data()[i * self.a.cols() + i]).sum()
    }
}

impl Objective for QuadraticForm {
    fn name(&self) -> &str {
        "quadratic-form"
    }

    fn shape(&self) -> (usize, usize) {
        (1, self.a.rows())
    }

    fn loss<'t>(&self, tape: &'t Tape, z: Var<'t>) -> crate::tensor::Result<Var<'t>> {
        let a = tape.constant(self.a.clone());
        z.matmul(a)?.mul(z)?.sum()?.mul_scalar(0.5)
    }

    fn value(&self, z: &Tensor) -> crate::tensor::Result<f64> {
        let n = self.a.rows();
        let (zd, ad) = (z.data(), self.a.data());
        let mut s = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| ad[i * n + j] * zd[j]).sum();
            s += zd[i] * row;
        }
        Ok(0.5 * s)
    }
}

/// Registered smooth test functions of a `1 × n` row vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    /// `Σ zᵢ²`
    Quadratic,
    /// `Σ exp(zᵢ)`
    ExpSum,
    /// `Σ softplus(zᵢ)`
    SoftplusSum,
    /// `Σ zᵢ⁴`
    Quartic,
    /// `exp(−½‖z‖²)`
    GaussianBump,
}

pub const TEST_FUNCTIONS: [TestFunction; 5] = [
    TestFunction::Quadratic,
    TestFunction::ExpSum,
    TestFunction::SoftplusSum,
    TestFunction::Quartic,
    TestFunction::GaussianBump,
];

impl TestFunction {
    pub fn name(self) -> &'static str {
        match self {
            Self::Quadratic => "quadratic",
            Self::ExpSum => "exp-sum",
            Self::SoftplusSum => "softplus-sum",
            Self::Quartic => "quartic",
            Self::GaussianBump => "gaussian-bump",
        }
    }

    pub fn is_quadratic(self) -> bool {
        self == Self::Quadratic
    }

    pub fn by_name(name: &str) -> Option<Self> {
        TEST_FUNCTIONS.into_iter().find(|f| f.name() == name)
    }

    /// Default dimension and evaluation point for residual studies.
    pub fn default_point(self) -> Tensor {
        let (n, v) = match self {
            Self::Quadratic => (4, 0.5),
            Self::ExpSum => (2, 0.0),
            Self::SoftplusSum => (4, 0.3),
            Self::Quartic => (3, 0.2),
            Self::GaussianBump => (3, 0.5),
        };
        Tensor::full(vec![1, n], v)
    }

    pub fn at_dim(self, n: usize) -> AnalyticFn {
        AnalyticFn { kind: self, n }
    }

    pub fn objective(self) -> AnalyticFn {
        self.at_dim(self.default_point().len())
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestFunction {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::by_name(s).ok_or_else(|| {
            let known: Vec<_> = TEST_FUNCTIONS.iter().map(|f| f.name()).collect();
            format!("unknown function `{s}` (known: {})", known.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AnalyticFn {
    kind: TestFunction,
    n: usize,
}

impl AnalyticFn {
    pub fn kind(&self) -> TestFunction {
        self.kind
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Objective for AnalyticFn {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn shape(&self) -> (usize, usize) {
        (1, self.n)
    }

    fn loss<'t>(&self, _tape: &'t Tape, z: Var<'t>) -> crate::tensor::Result<Var<'t>> {
        match self.kind {
            TestFunction::Quadratic => z.square()?.sum(),
            TestFunction::ExpSum => z.exp()?.sum(),
            TestFunction::SoftplusSum => z.softplus()?.sum(),
            TestFunction::Quartic => z.square()?.square()?.sum(),
            TestFunction::GaussianBump => z.square()?.sum()?.mul_scalar(-0.5)?.exp(),
        }
    }

    fn value(&self, z: &Tensor) -> crate::tensor::Result<f64> {
        let d = z.data();
        let v = match self.kind {
            TestFunction::Quadratic => d.iter().map(|x| x * x).sum(),
            TestFunction::ExpSum => d.iter().map(|x| x.exp()).sum(),
            TestFunction::SoftplusSum => d.iter().map(|&x| softplus(x)).sum(),
            TestFunction::Quartic => d.iter().map(|x| x.powi(4)).sum(),
            TestFunction::GaussianBump => (-0.5 * d.iter().map(|x| x * x).sum::<f64>()).exp(),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TensorError::NonFinite("test function value"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_of_squared_norm_is_six() {
        let f = TestFunction::Quadratic.at_dim(3);
        for z in [[0.0, 0.0, 0.0], [1.5, -2.0, 7.0]] {
            let z = Tensor::matrix(1, 3, z.to_vec()).unwrap();
            for h in [1e-1, 1e-3] {
                assert!((laplacian_fd(&f, &z, h).unwrap() - 6.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn laplacian_of_quadratic_form_is_trace() {
        let q = QuadraticForm::random(5, &mut Rng::new(9, 0));
        let z = Rng::new(9, 1).normal(vec![1, 5]);
        let lap = laplacian_fd(&q, &z, ANALYTIC_STEP).unwrap();
        assert!((lap - q.trace()).abs() < 1e-8 * (1.0 + q.trace().abs()) + 1e-7, "{lap}");
    }

    #[test]
    fn laplacian_of_sine_at_zero() {
        use crate::objective::FnObjective;
        let f = FnObjective::new(
            "sin",
            (1, 2),
            |_, _| unreachable!(),
            |z: &Tensor| Ok(z.data()[0].sin()),
        );
        let lap = laplacian_fd(&f, &Tensor::zeros(vec![1, 2]), 1e-3).unwrap();
        assert!(lap.abs() < 1e-6);
    }

    #[test]
    fn hessian_of_quadratic_form() {
        let q = QuadraticForm::random(4, &mut Rng::new(2, 0));
        let z = Rng::new(2, 1).normal(vec![1, 4]);
        let h = hessian_fd(&q, &z, 1e-3).unwrap();
        let err = h
            .data()
            .iter()
            .zip(q.matrix().data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn hutchinson_on_linear_is_zero() {
        use crate::objective::FnObjective;
        let f = FnObjective::new(
            "linear",
            (1, 3),
            |t, z| z.mul(t.constant(Tensor::matrix(1, 3, vec![1.0, -2.0, 3.0]).unwrap()))?.sum(),
            |z: &Tensor| Ok(z.data()[0] - 2.0 * z.data()[1] + 3.0 * z.data()[2]),
        );
        let est = hutchinson_trace(&f, &Tensor::zeros(vec![1, 3]), 1e-3, 16, &mut Rng::new(1, 0))
            .unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn hutchinson_matches_trace() {
        let q = QuadraticForm::random(6, &mut Rng::new(4, 0));
        let z = Tensor::zeros(vec![1, 6]);
        let est = hutchinson_trace(&q, &z, 1e-3, 4000, &mut Rng::new(4, 1)).unwrap();
        assert!(est.within(q.trace(), 3.0), "{est:?} vs {}", q.trace());
        let small = hutchinson_trace(&q, &z, 1e-3, 1000, &mut Rng::new(4, 2)).unwrap();
        let ratio = small.std_error / est.std_error;
        assert!((1.5..2.7).contains(&ratio), "{ratio}");
    }

    #[test]
    fn squared_norm_gap_is_n_sigma_squared() {
        let f = TestFunction::Quadratic.at_dim(4);
        let z = Tensor::zeros(vec![1, 4]);
        let r = verify_prop1(&f, &z, 0.1, 200_000, &mut Rng::new(3, 0), Prop1Options::default())
            .unwrap();
        assert!(r.noise_gap.within(0.04, 3.0), "{:?}", r.noise_gap);
        assert!((r.predicted_gap() - 0.04).abs() < 1e-9);
    }

    #[test]
    fn antithetic_cubic_gap_is_exactly_zero() {
        use crate::objective::FnObjective;
        let f = FnObjective::new(
            "cubic",
            (1, 2),
            |_, z| z.square()?.mul(z)?.sum(),
            |z: &Tensor| Ok(z.data()[0].powi(3)),
        );
        let z = Tensor::zeros(vec![1, 2]);
        let opts = Prop1Options {
            antithetic: true,
            ..Prop1Options::default()
        };
        let r = verify_prop1(&f, &z, 0.3, 1000, &mut Rng::new(5, 0), opts).unwrap();
        assert_eq!(r.noise_gap.mean, 0.0);
        let plain = verify_prop1(&f, &z, 0.3, 1000, &mut Rng::new(5, 0), Prop1Options::default())
            .unwrap();
        assert!(plain.noise_gap.std_error > 0.0);
    }

    #[test]
    fn uniform_ball_has_unit_covariance() {
        let n = 5;
        let mut rng = Rng::new(8, 0);
        let mut e = vec![0.0; n];
        let draws = 200_000;
        let mut sq = 0.0;
        for _ in 0..draws {
            NoiseShape::UniformBall.draw(&mut rng, n, 0.5, &mut e);
            sq += e.iter().map(|x| x * x).sum::<f64>();
            assert!(e.iter().map(|x| x * x).sum::<f64>().sqrt() <= 0.5 * 7f64.sqrt() + 1e-12);
        }
        let per_dim = sq / (draws * n) as f64;
        assert!((per_dim - 0.25).abs() < 0.005, "{per_dim}");
    }

    #[test]
    fn quadratic_scaling_is_exact() {
        let f = TestFunction::Quadratic.objective();
        let z = TestFunction::Quadratic.default_point();
        let rep = scaling_study(
            &f,
            &z,
            &[0.02, 0.05, 0.1, 0.2],
            1000,
            &mut Rng::new(1, 0),
            Prop1Options::residual_study(),
        )
        .unwrap();
        assert_eq!(rep.verdict, ScalingVerdict::Exact);
    }

    #[test]
    fn scaling_rejects_narrow_sigma_range() {
        let f = TestFunction::ExpSum.objective();
        let z = TestFunction::ExpSum.default_point();
        let err = scaling_study(&f, &z, &[0.1, 0.2, 0.3, 0.4], 10, &mut Rng::new(1, 0), Prop1Options::default());
        assert!(matches!(err, Err(CurvatureError::InvalidParam(_))));
    }

    #[test]
    fn non_finite_is_reported() {
        let f = TestFunction::ExpSum.at_dim(1);
        let z = Tensor::full(vec![1, 1], 709.5);
        assert!(matches!(laplacian_fd(&f, &z, 1.0), Err(CurvatureError::NonFinite(_))));
    }

    #[test]
    fn tape_and_plain_values_agree() {
        let z = Tensor::matrix(1, 3, vec![0.3, -1.2, 0.8]).unwrap();
        for kind in TEST_FUNCTIONS {
            let f = kind.at_dim(3);
            let (tv, _) = f.value_and_grad(&z).unwrap();
            assert!((tv - f.value(&z).unwrap()).abs() < 1e-12, "{kind}");
        }
    }
}
