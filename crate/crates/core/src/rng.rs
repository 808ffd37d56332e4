//! Seeded, stream-splittable randomness.
//!
//! Each [`Rng`] is a ChaCha8 keystream selected by `(seed, stream)`, so
//! per-trial generators derived from a master seed never share state and are
//! reproducible regardless of how trials are scheduled.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::Tensor;

pub const DEFAULT_SEED: u64 = 321;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RandError {
    #[error("degrees of freedom must be positive and finite, got {0}")]
    InvalidDf(f64),
}

/// Independent purposes a trial may draw randomness for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    Task = 0,
    Init = 1,
    Noise = 2,
    Probe = 3,
    Inference = 4,
}

#[derive(Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl std::fmt::Debug for Rng {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Rng")
            .field("seed", &self.seed)
            .field("stream", &self.stream)
            .finish_non_exhaustive()
    }
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            spare_normal: None,
        }
    }

    /// Generator for `lane` of trial `trial` under `seed`.
    pub fn for_trial(seed: u64, trial: u64, lane: Lane) -> Self {
        Self::new(seed, (trial << 8) | lane as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.gen();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box–Muller; the second value of each pair is cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn rademacher(&mut self) -> f64 {
        if self.inner.gen::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// Gamma(shape, scale 1) by Marsaglia–Tsang; shapes below one use the
    /// `U^(1/shape)` boost.
    pub fn gamma(&mut self, shape: f64) -> Result<f64, RandError> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(RandError::InvalidDf(2.0 * shape));
        }
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0)?;
            let boost = self.uniform().powf(1.0 / shape);
            // Underflow to zero is possible for tiny shapes; chi-square draws
            // must stay strictly positive.
            return Ok((g * boost).max(f64::MIN_POSITIVE));
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.standard_normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return Ok(d * v);
            }
        }
    }

    /// χ²(df) as Gamma(df/2, scale 2).
    pub fn chi_square_scalar(&mut self, df: f64) -> Result<f64, RandError> {
        if !(df > 0.0 && df.is_finite()) {
            return Err(RandError::InvalidDf(df));
        }
        Ok(2.0 * self.gamma(0.5 * df)?)
    }

    pub fn normal(&mut self, shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| self.standard_normal()).collect();
        Tensor::from_parts(shape, data)
    }

    pub fn chi_square(&mut self, df: f64, shape: impl Into<Vec<usize>>) -> Result<Tensor, RandError> {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| self.chi_square_scalar(df))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Tensor::from_parts(shape, data))
    }
}

/// Two-sided Kolmogorov–Smirnov critical value at significance 1% for an
/// effective sample size `n` (asymptotic form).
pub fn ks_critical_1pct(n_eff: f64) -> f64 {
    1.627_624 / n_eff.sqrt()
}

/// One-sample KS statistic of `samples` against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs())
    })
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(321, 0);
        let mut b = Rng::new(321, 0);
        for _ in 0..100 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn golden_first_normal() {
        let mut r = Rng::new(DEFAULT_SEED, 0);
        assert_eq!(r.standard_normal().to_bits(), GOLDEN_FIRST_NORMAL_BITS);
    }

    // 0.5123218517431093, captured once from this generator.
    const GOLDEN_FIRST_NORMAL_BITS: u64 = 0x3fe0_64f0_cbc8_68fb;

    #[test]
    fn normal_moments() {
        let mut r = Rng::new(7, 0);
        let xs = r.normal(vec![1_000_000]).into_data();
        let (mean, var) = moments(&xs);
        assert!(mean.abs() < 4.0 / 1000.0, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "var {var}");
    }

    #[test]
    fn chi_square_moments_df21() {
        let mut r = Rng::new(11, 0);
        let xs = r.chi_square(21.0, vec![1_000_000]).unwrap().into_data();
        let (mean, var) = moments(&xs);
        assert!((mean - 21.0).abs() < 0.21, "mean {mean}");
        assert!((var - 42.0).abs() < 0.03 * 42.0, "var {var}");
        assert!(xs.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn chi_square_df2_is_exponential() {
        let mut r = Rng::new(13, 0);
        let xs = r.chi_square(2.0, vec![100_000]).unwrap().into_data();
        let d = ks_statistic(&xs, |x| 1.0 - (-0.5 * x).exp());
        assert!(d < ks_critical_1pct(100_000.0), "ks {d}");
    }

    #[test]
    fn small_df_positive() {
        let mut r = Rng::new(17, 0);
        let xs = r.chi_square(0.3, vec![10_000]).unwrap().into_data();
        assert!(xs.iter().all(|&x| x > 0.0 && x.is_finite()));
        let (mean, _) = moments(&xs);
        assert!((mean - 0.3).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn invalid_df() {
        let mut r = Rng::new(1, 0);
        assert_eq!(r.chi_square(0.0, vec![1]), Err(RandError::InvalidDf(0.0)));
        assert!(r.chi_square(-3.0, vec![1]).is_err());
    }

    #[test]
    fn streams_uncorrelated() {
        let mut a = Rng::new(321, 0);
        let mut b = Rng::new(321, 1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| a.standard_normal()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.standard_normal()).collect();
        let (mx, vx) = moments(&xs);
        let (my, vy) = moments(&ys);
        let cov = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / (n as f64 - 1.0);
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 0.01, "corr {corr}");
    }
}
