//! Variational prompt distributions with reparameterized sampling.
//!
//! A [`PromptDistribution`] holds a mean `mu` and a log-scale `log_sigma`
//! (both `m × n`), a tail parameter `nu`, and a [`NoiseFamily`]. Every family
//! produces a standardized noise matrix `xi` that is constant with respect to
//! the parameters, and a sample is always
//!
//! ```text
//! z = mu + exp(log_sigma) ⊙ xi
//! ```
//!
//! so gradients reach `mu` and `log_sigma` and never the noise.
//!
//! For the multivariate t family each row `i` draws `eps_i ~ N(0, I_n)` and a
//! single mixing variable `delta_i ~ χ²(nu + n)` and uses
//! `xi_i = sqrt((nu + n) / delta_i) / sqrt(1 + n / nu) · eps_i`, which makes
//! `z_i ~ t(mu_i, diag(sigma_i²) / (1 + n / nu), nu + n)`.

use std::fmt;

use thiserror::Error;

use crate::gradcheck::{central_difference, relative_error, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::rng::{RandError, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_NU: f64 = 5.0;
pub const DEFAULT_MC_SAMPLES: usize = 10;

/// Largest log-scale accepted; keeps `exp(log_sigma)` finite with headroom.
const MAX_LOG_SIGMA: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("unknown distribution family `{0}`")]
    UnknownFamily(String),
    #[error("gradient mismatch for {param}: relative error {rel_err:e}")]
    GradMismatch { param: &'static str, rel_err: f64 },
    #[error(transparent)]
    Rand(#[from] RandError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A way of drawing standardized prompt noise.
pub trait NoiseFamily: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether `nu` enters the law.
    fn uses_nu(&self) -> bool;

    fn validate(&self, nu: f64, n: usize) -> Result<(), DistError>;

    /// Draws the `rows × cols` noise matrix `xi`.
    fn standardized(&self, rng: &mut Rng, rows: usize, cols: usize, nu: f64)
        -> Result<Tensor, DistError>;

    /// Per-coordinate variance of `xi`, when finite.
    fn unit_variance(&self, nu: f64, n: usize) -> Option<f64>;
}

impl fmt::Debug for dyn NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn validate_t(nu: f64, n: usize) -> Result<(), DistError> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(DistError::InvalidDistribution(format!(
            "nu must be positive and finite, got {nu}"
        )));
    }
    if nu + n as f64 <= 2.0 {
        return Err(DistError::InvalidDistribution(format!(
            "nu + n = {} must exceed 2",
            nu + n as f64
        )));
    }
    Ok(())
}

/// Multiplies row `i` of `eps` by `scales[i]`.
fn scale_rows(mut eps: Tensor, cols: usize, scales: &[f64]) -> Result<Tensor, DistError> {
    for (row, s) in eps.data_mut().chunks_mut(cols).zip(scales) {
        row.iter_mut().for_each(|v| *v *= s);
    }
    if eps.data().iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite("t mixing").into());
    }
    Ok(eps)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StudentT;

impl NoiseFamily for StudentT {
    fn name(&self) -> &'static str {
        "student-t"
    }

    fn uses_nu(&self) -> bool {
        true
    }

    fn validate(&self, nu: f64, n: usize) -> Result<(), DistError> {
        validate_t(nu, n)
    }

    fn standardized(
        &self,
        rng: &mut Rng,
        rows: usize,
        cols: usize,
        nu: f64,
    ) -> Result<Tensor, DistError> {
        let df = nu + cols as f64;
        let shrink = (1.0 + cols as f64 / nu).sqrt();
        let eps = rng.normal(vec![rows, cols]);
        let scales = (0..rows)
            .map(|_| Ok((df / rng.chi_square_scalar(df)?).sqrt() / shrink))
            .collect::<Result<Vec<f64>, RandError>>()?;
        scale_rows(eps, cols, &scales)
    }

    fn unit_variance(&self, nu: f64, n: usize) -> Option<f64> {
        let df = nu + n as f64;
        (df > 2.0).then(|| df / (df - 2.0) / (1.0 + n as f64 / nu))
    }
}

/// The noise multiplier `(nu + n) / sqrt(delta)` exactly as typeset in the
/// source formula, kept for comparison with [`StudentT`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LiteralStudentT;

impl NoiseFamily for LiteralStudentT {
    fn name(&self) -> &'static str {
        "student-t-literal"
    }

    fn uses_nu(&self) -> bool {
        true
    }

    fn validate(&self, nu: f64, n: usize) -> Result<(), DistError> {
        validate_t(nu, n)
    }

    fn standardized(
        &self,
        rng: &mut Rng,
        rows: usize,
        cols: usize,
        nu: f64,
    ) -> Result<Tensor, DistError> {
        let df = nu + cols as f64;
        let shrink = (1.0 + cols as f64 / nu).sqrt();
        let eps = rng.normal(vec![rows, cols]);
        let scales = (0..rows)
            .map(|_| Ok(df / rng.chi_square_scalar(df)?.sqrt() / shrink))
            .collect::<Result<Vec<f64>, RandError>>()?;
        scale_rows(eps, cols, &scales)
    }

    fn unit_variance(&self, nu: f64, n: usize) -> Option<f64> {
        // E[1/δ] for δ ~ χ²(k) is 1/(k-2).
        let df = nu + n as f64;
        (df > 2.0).then(|| df * df / (df - 2.0) / (1.0 + n as f64 / nu))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Gaussian;

impl NoiseFamily for Gaussian {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn uses_nu(&self) -> bool {
        false
    }

    fn validate(&self, _nu: f64, _n: usize) -> Result<(), DistError> {
        Ok(())
    }

    fn standardized(
        &self,
        rng: &mut Rng,
        rows: usize,
        cols: usize,
        _nu: f64,
    ) -> Result<Tensor, DistError> {
        Ok(rng.normal(vec![rows, cols]))
    }

    fn unit_variance(&self, _nu: f64, _n: usize) -> Option<f64> {
        Some(1.0)
    }
}

static FAMILIES: [&dyn NoiseFamily; 3] = [&StudentT, &Gaussian, &LiteralStudentT];

/// All registered families.
pub fn families() -> &'static [&'static dyn NoiseFamily] {
    &FAMILIES
}

pub fn family(name: &str) -> Result<&'static dyn NoiseFamily, DistError> {
    FAMILIES
        .iter()
        .copied()
        .find(|f| f.name() == name)
        .ok_or_else(|| DistError::UnknownFamily(name.to_string()))
}

#[derive(Clone)]
pub struct PromptDistribution {
    pub mu: Tensor,
    pub log_sigma: Tensor,
    pub nu: f64,
    pub family: &'static dyn NoiseFamily,
    /// Pins the scale to exactly zero: samples equal `mu` and `log_sigma` is
    /// never updated.
    pub zero_scale: bool,
}

impl fmt::Debug for PromptDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PromptDistribution")
            .field("family", &self.family.name())
            .field("nu", &self.nu)
            .field("shape", &self.mu.shape())
            .field("zero_scale", &self.zero_scale)
            .finish()
    }
}

/// Tape handles for the distribution parameters.
#[derive(Debug, Clone, Copy)]
pub struct DistVars<'t> {
    pub mu: Var<'t>,
    pub log_sigma: Var<'t>,
}

impl PromptDistribution {
    /// `log_sigma` starts at zero (unit scale).
    pub fn new(mu: Tensor, nu: f64, family: &'static dyn NoiseFamily) -> Result<Self, DistError> {
        let log_sigma = Tensor::zeros(mu.shape().to_vec());
        Self::with_log_sigma(mu, log_sigma, nu, family)
    }

    pub fn with_log_sigma(
        mu: Tensor,
        log_sigma: Tensor,
        nu: f64,
        family: &'static dyn NoiseFamily,
    ) -> Result<Self, DistError> {
        let d = Self {
            mu,
            log_sigma,
            nu,
            family,
            zero_scale: false,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_zero_scale(mut self) -> Self {
        self.zero_scale = true;
        self
    }

    pub fn rows(&self) -> usize {
        self.mu.rows()
    }

    /// Embedding dimensionality `n`.
    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn validate(&self) -> Result<(), DistError> {
        if self.mu.rank() != 2 {
            return Err(DistError::InvalidDistribution(format!(
                "mu must be m × n, got shape {:?}",
                self.mu.shape()
            )));
        }
        if self.mu.shape() != self.log_sigma.shape() {
            return Err(DistError::InvalidDistribution(format!(
                "mu {:?} and log_sigma {:?} differ in shape",
                self.mu.shape(),
                self.log_sigma.shape()
            )));
        }
        if self.log_sigma.data().iter().any(|&v| v > MAX_LOG_SIGMA) {
            return Err(DistError::InvalidDistribution(
                "scale overflows".to_string(),
            ));
        }
        self.family.validate(self.nu, self.dim())
    }

    pub fn sigma(&self) -> Tensor {
        if self.zero_scale {
            Tensor::zeros(self.mu.shape().to_vec())
        } else {
            Tensor::from_parts(
                self.mu.shape().to_vec(),
                self.log_sigma.data().iter().map(|v| v.exp()).collect(),
            )
        }
    }

    /// The mean prompt, detached from any graph.
    pub fn mean_prompt(&self) -> Tensor {
        self.mu.clone()
    }

    pub fn draw_noise(&self, rng: &mut Rng) -> Result<Tensor, DistError> {
        self.family
            .standardized(rng, self.rows(), self.dim(), self.nu)
    }

    pub fn leaves<'t>(&self, tape: &'t Tape) -> DistVars<'t> {
        DistVars {
            mu: tape.leaf(self.mu.clone()),
            log_sigma: tape.leaf(self.log_sigma.clone()),
        }
    }

    /// `mu + exp(log_sigma) ⊙ noise` on the tape; `mu` itself under a pinned
    /// zero scale.
    pub fn reparameterize<'t>(
        &self,
        vars: &DistVars<'t>,
        noise: &Tensor,
    ) -> Result<Var<'t>, DistError> {
        if self.zero_scale {
            return Ok(vars.mu);
        }
        let tape = vars.mu.tape();
        let xi = tape.constant(noise.clone());
        let sigma = vars.log_sigma.exp()?;
        Ok(vars.mu.add(sigma.mul(xi)?)?)
    }

    /// Draws fresh noise and returns a differentiable sample.
    pub fn sample_reparam<'t>(
        &self,
        vars: &DistVars<'t>,
        rng: &mut Rng,
    ) -> Result<Var<'t>, DistError> {
        let noise = self.draw_noise(rng)?;
        self.reparameterize(vars, &noise)
    }

    /// A plain sample.
    pub fn sample(&self, rng: &mut Rng) -> Result<Tensor, DistError> {
        let noise = self.draw_noise(rng)?;
        if self.zero_scale {
            return Ok(self.mu.clone());
        }
        let sigma = self.sigma();
        let data = self
            .mu
            .data()
            .iter()
            .zip(sigma.data())
            .zip(noise.data())
            .map(|((m, s), e)| m + s * e)
            .collect();
        Ok(Tensor::new(self.mu.shape().to_vec(), data)?)
    }
}

#[derive(Debug, Clone)]
pub struct ReparamGradReport {
    pub mu_rel_err: f64,
    pub log_sigma_rel_err: f64,
    pub grad_mu: Tensor,
    pub grad_log_sigma: Tensor,
}

/// Checks autodiff gradients of `downstream(sample(d))` against central
/// differences with the noise frozen at one draw from `rng`.
pub fn grad_check_reparam<F>(
    d: &PromptDistribution,
    downstream: F,
    rng: &mut Rng,
) -> Result<ReparamGradReport, DistError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, TensorError>,
{
    let noise = d.draw_noise(rng)?;
    let tape = Tape::new();
    let vars = d.leaves(&tape);
    let z = d.reparameterize(&vars, &noise)?;
    let out = downstream(&tape, z)?;
    tape.backward(out)?;
    let zeros = Tensor::zeros(d.mu.shape().to_vec());
    let grad_mu = tape.grad(vars.mu).unwrap_or_else(|| zeros.clone());
    let grad_log_sigma = tape.grad(vars.log_sigma).unwrap_or(zeros);

    let eval = |mu: &Tensor, ls: &Tensor| -> Result<f64, TensorError> {
        let t = Tape::new();
        let v = DistVars {
            mu: t.constant(mu.clone()),
            log_sigma: t.constant(ls.clone()),
        };
        let z = d
            .reparameterize(&v, &noise)
            .map_err(|_| TensorError::NonFinite("reparameterize"))?;
        Ok(downstream(&t, z)?.item())
    };
    let fd_mu = central_difference(|m| eval(m, &d.log_sigma), &d.mu, DEFAULT_STEP)?;
    let fd_ls = if d.zero_scale {
        Tensor::zeros(d.mu.shape().to_vec())
    } else {
        central_difference(|ls| eval(&d.mu, ls), &d.log_sigma, DEFAULT_STEP)?
    };
    let report = ReparamGradReport {
        mu_rel_err: relative_error(&grad_mu, &fd_mu),
        log_sigma_rel_err: relative_error(&grad_log_sigma, &fd_ls),
        grad_mu,
        grad_log_sigma,
    };
    if report.mu_rel_err >= DEFAULT_TOLERANCE {
        return Err(DistError::GradMismatch {
            param: "mu",
            rel_err: report.mu_rel_err,
        });
    }
    if report.log_sigma_rel_err >= DEFAULT_TOLERANCE {
        return Err(DistError::GradMismatch {
            param: "log_sigma",
            rel_err: report.log_sigma_rel_err,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mu(rows: usize, cols: usize, seed: u64) -> Tensor {
        Rng::new(seed, 9).normal(vec![rows, cols])
    }

    #[test]
    fn registry_lookup() {
        assert_eq!(family("student-t").unwrap().name(), "student-t");
        assert_eq!(family("gaussian").unwrap().name(), "gaussian");
        assert!(matches!(family("cauchy"), Err(DistError::UnknownFamily(_))));
    }

    #[test]
    fn zero_scale_returns_mean_exactly() {
        let m = mu(3, 4, 1);
        let d = PromptDistribution::new(m.clone(), 5.0, &StudentT)
            .unwrap()
            .with_zero_scale();
        let mut rng = Rng::new(2, 0);
        assert_eq!(d.sample(&mut rng).unwrap(), m);
        let tape = Tape::new();
        let v = d.leaves(&tape);
        assert_eq!(d.sample_reparam(&v, &mut rng).unwrap().value(), m);
    }

    #[test]
    fn invalid_distributions() {
        let m = mu(2, 1, 1);
        assert!(PromptDistribution::new(m.clone(), 1.0, &StudentT).is_err());
        assert!(PromptDistribution::new(m.clone(), -1.0, &StudentT).is_err());
        assert!(PromptDistribution::new(m.clone(), 1.0, &Gaussian).is_ok());
        let bad = Tensor::zeros(vec![2, 2]);
        assert!(PromptDistribution::with_log_sigma(m, bad, 5.0, &Gaussian).is_err());
    }

    #[test]
    fn mean_prompt_ignores_family() {
        let m = mu(2, 4, 3);
        let a = PromptDistribution::new(m.clone(), 5.0, &StudentT).unwrap();
        let b = PromptDistribution::new(m.clone(), 5.0, &Gaussian).unwrap();
        assert_eq!(a.mean_prompt(), m);
        assert_eq!(a.mean_prompt(), b.mean_prompt());
    }

    #[test]
    fn linear_downstream_gives_unit_mu_gradient() {
        let d = PromptDistribution::new(mu(2, 3, 4), 5.0, &StudentT).unwrap();
        let r = grad_check_reparam(&d, |_, z| z.sum(), &mut Rng::new(5, 0)).unwrap();
        assert_eq!(r.grad_mu, Tensor::ones(vec![2, 3]));
    }

    #[test]
    fn gaussian_sigma_gradient_is_noise() {
        // d z / d sigma = eps, so d sum(z) / d log_sigma = sigma ⊙ eps.
        let ls = Tensor::matrix(1, 3, vec![0.3, -0.2, 0.0]).unwrap();
        let d = PromptDistribution::with_log_sigma(mu(1, 3, 6), ls, 5.0, &Gaussian).unwrap();
        let mut rng = Rng::new(8, 0);
        let noise = d.draw_noise(&mut rng.clone()).unwrap();
        let r = grad_check_reparam(&d, |_, z| z.sum(), &mut rng).unwrap();
        let sigma = d.sigma();
        let grad_sigma: Vec<f64> = r
            .grad_log_sigma
            .data()
            .iter()
            .zip(sigma.data())
            .map(|(g, s)| g / s)
            .collect();
        for (g, e) in grad_sigma.iter().zip(noise.data()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn squared_downstream_matches_finite_differences() {
        for fam in families() {
            let ls = Rng::new(10, 1).normal(vec![3, 5]).map(|v| 0.3 * v).unwrap();
            let d = PromptDistribution::with_log_sigma(mu(3, 5, 11), ls, 5.0, *fam).unwrap();
            grad_check_reparam(&d, |_, z| z.square()?.sum(), &mut Rng::new(12, 0)).unwrap();
        }
    }
}
