//! Central finite differences, the reference against which every autodiff
//! gradient in this crate is checked.

use thiserror::Error;

use crate::curvature::TEST_FUNCTIONS;
use crate::decoder::{
    bce_loss_var, dice_loss_var, make_task, mask_loss_var, Combine, DecoderError, TaskSpec,
};
use crate::dist::{self, DistError, DistVars, PromptDistribution};
use crate::landscapes::{self, LandscapeError};
use crate::objective::Objective;
use crate::rng::{Lane, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// `[f(x + h e_i) - f(x - h e_i)] / 2h` for every coordinate.
pub fn central_difference(
    f: impl Fn(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let scale = a.max_abs().max(b.max_abs());
    if scale == 0.0 {
        return 0.0;
    }
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

/// Largest relative error between the tape gradient of `f` at `x` and
/// central differences.
pub fn check_scalar_fn<F>(x: &Tensor, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&tape, xv)?;
    tape.backward(out)?;
    let grad = tape.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let fd = central_difference(
        |p| {
            let t = Tape::new();
            let pv = t.constant(p.clone());
            Ok(f(&t, pv)?.item())
        },
        x,
        DEFAULT_STEP,
    )?;
    Ok(relative_error(&grad, &fd))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub index: usize,
    pub op: &'static str,
    pub shape: Vec<usize>,
    pub rel_err: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.rel_err < DEFAULT_TOLERANCE
    }
}

/// Operations covered by [`grad_case`], cycled through by index.
pub const GRAD_OPS: [&str; 33] = [
    "add", "sub", "mul", "div", "add-scalar", "mul-scalar", "exp", "log", "tanh", "sigmoid",
    "softplus", "sqrt", "neg", "square", "matmul-left", "matmul-right", "sum", "mean", "max",
    "sum-axis", "max-axis", "reshape", "transpose", "norm", "broadcast-add", "bce", "dice",
    "mask-loss", "decoder", "reparam-mu", "reparam-log-sigma", "plateau-ball", "test-functions",
];

/// Weighted sum so every output entry contributes a distinct gradient.
fn contract<'t>(out: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    let wv = out.tape().constant(w.clone());
    out.mul(wv)?.sum()
}

/// Runs seeded case `index`; the op is `GRAD_OPS[index % GRAD_OPS.len()]`.
pub fn grad_case(seed: u64, index: usize) -> std::result::Result<GradCase, GradCheckError> {
    let op = GRAD_OPS[index % GRAD_OPS.len()];
    let mut rng = Rng::for_trial(seed, index as u64, Lane::Probe);
    let rows = 2 + rng.below(3);
    let cols = 2 + rng.below(4);
    let shape = vec![rows, cols];
    let x = rng.normal(shape.clone());
    let y = rng.normal(shape.clone());
    let w = rng.normal(shape.clone());
    let positive = x.map(|v| v.abs() + 0.5)?;
    let bounded = y.map(|v| 1.5 + v.tanh())?;
    let err = match op {
        "add" => check_scalar_fn(&x, |t, v| contract(v.add(t.constant(y.clone()))?.mul(v)?, &w))?,
        "sub" => check_scalar_fn(&x, |t, v| contract(t.constant(y.clone()).sub(v)?.mul(v)?, &w))?,
        "mul" => check_scalar_fn(&x, |t, v| contract(v.mul(t.constant(y.clone()))?.mul(v)?, &w))?,
        "div" => check_scalar_fn(&x, |t, v| {
            contract(v.div(t.constant(bounded.clone()))?.add(t.constant(y.clone()).div(v.square()?.add_scalar(1.0)?)?)?, &w)
        })?,
        "add-scalar" => check_scalar_fn(&x, |_, v| contract(v.add_scalar(0.7)?.square()?, &w))?,
        "mul-scalar" => check_scalar_fn(&x, |_, v| contract(v.mul_scalar(-1.3)?.square()?, &w))?,
        "exp" => check_scalar_fn(&x, |_, v| contract(v.exp()?, &w))?,
        "log" => check_scalar_fn(&positive, |_, v| contract(v.log()?, &w))?,
        "tanh" => check_scalar_fn(&x, |_, v| contract(v.tanh()?, &w))?,
        "sigmoid" => check_scalar_fn(&x, |_, v| contract(v.sigmoid()?, &w))?,
        "softplus" => check_scalar_fn(&x, |_, v| contract(v.softplus()?, &w))?,
        "sqrt" => check_scalar_fn(&positive, |_, v| contract(v.sqrt()?, &w))?,
        "neg" => check_scalar_fn(&x, |_, v| contract(v.neg()?.mul(v)?, &w))?,
        "square" => check_scalar_fn(&x, |_, v| contract(v.square()?, &w))?,
        "matmul-left" => {
            let b = rng.normal(vec![cols, 3]);
            let wb = rng.normal(vec![rows, 3]);
            check_scalar_fn(&x, |t, v| contract(v.matmul(t.constant(b.clone()))?, &wb))?
        }
        "matmul-right" => {
            let a = rng.normal(vec![3, rows]);
            let wa = rng.normal(vec![3, cols]);
            check_scalar_fn(&x, |t, v| contract(t.constant(a.clone()).matmul(v)?, &wa))?
        }
        "sum" => check_scalar_fn(&x, |_, v| v.square()?.sum())?,
        "mean" => check_scalar_fn(&x, |_, v| v.exp()?.mean())?,
        "max" => check_scalar_fn(&x, |_, v| v.mul_scalar(2.0)?.max())?,
        "sum-axis" => {
            let axis = rng.below(2);
            let wr = rng.normal(vec![if axis == 0 { cols } else { rows }]);
            check_scalar_fn(&x, |_, v| contract(v.tanh()?.sum_axis(axis)?, &wr))?
        }
        "max-axis" => {
            let axis = rng.below(2);
            let wr = rng.normal(vec![if axis == 0 { cols } else { rows }]);
            check_scalar_fn(&x, |_, v| contract(v.max_axis(axis)?, &wr))?
        }
        "reshape" => {
            let wr = rng.normal(vec![rows * cols]);
            check_scalar_fn(&x, |_, v| contract(v.square()?.reshape(vec![rows * cols])?, &wr))?
        }
        "transpose" => {
            let wt = rng.normal(vec![cols, rows]);
            check_scalar_fn(&x, |_, v| contract(v.transpose()?.exp()?, &wt))?
        }
        "norm" => check_scalar_fn(&x, |_, v| v.norm())?,
        "broadcast-add" => {
            let row = rng.normal(vec![1, cols]);
            check_scalar_fn(&row, |t, v| contract(t.constant(x.clone()).add(v)?.square()?, &w))?
        }
        "bce" | "dice" | "mask-loss" => {
            let target = rng.normal(shape.clone()).map(|v| if v > 0.0 { 1.0 } else { 0.0 })?;
            let f = match op {
                "bce" => bce_loss_var,
                "dice" => dice_loss_var,
                _ => mask_loss_var,
            };
            check_scalar_fn(&x, |_, v| f(v, &target))?
        }
        "decoder" => {
            let task = make_task(TaskSpec {
                seed: seed ^ index as u64,
                prompts: 2,
                dim: 4,
                height: 6,
                width: 6,
                features: 3,
                combine: if rng.below(2) == 0 { Combine::Max } else { Combine::Sum },
            })?;
            let z = rng.normal(vec![2, 4]).map(|v| 0.3 * v)?;
            check_scalar_fn(&z, |t, v| task.loss(t, v))?
        }
        "reparam-mu" | "reparam-log-sigma" => {
            let fam = dist::families()[rng.below(dist::families().len())];
            let d = PromptDistribution::with_log_sigma(x.clone(), y.map(|v| 0.3 * v)?, 5.0, fam)?;
            let noise = d.draw_noise(&mut rng)?;
            let fix_mu = d.mu.clone();
            let fix_ls = d.log_sigma.clone();
            if op == "reparam-mu" {
                check_scalar_fn(&fix_mu, |t, v| {
                    let vars = DistVars { mu: v, log_sigma: t.constant(fix_ls.clone()) };
                    contract(d.reparameterize(&vars, &noise).map_err(dist_to_tensor)?.tanh()?, &w)
                })?
            } else {
                check_scalar_fn(&fix_ls, |t, v| {
                    let vars = DistVars { mu: t.constant(fix_mu.clone()), log_sigma: v };
                    contract(d.reparameterize(&vars, &noise).map_err(dist_to_tensor)?.tanh()?, &w)
                })?
            }
        }
        "plateau-ball" => {
            let n = 2 + rng.below(6);
            let center = rng.normal(vec![1, n]);
            let l = landscapes::plateau_ball(&center, 1.0 + rng.uniform(), 2.0 + 4.0 * rng.uniform())?;
            let z = rng.normal(vec![1, n]).map(|v| 1.5 * v)?;
            let z = z.zip_map(&center, |a, b| a + b)?;
            check_scalar_fn(&z, |t, v| l.loss(t, v))?
        }
        "test-functions" => {
            let f = TEST_FUNCTIONS[rng.below(TEST_FUNCTIONS.len())];
            let obj = f.at_dim(2 + rng.below(5));
            let (r, c) = obj.shape();
            // Away from the origin, where the quartic's gradient vanishes
            // faster than the difference quotient's truncation error.
            let z = rng.normal(vec![r, c]).map(|v| v.signum() * (0.3 + 0.5 * v.abs()))?;
            check_scalar_fn(&z, |t, v| obj.loss(t, v))?
        }
        other => unreachable!("unhandled op {other}"),
    };
    Ok(GradCase {
        index,
        op,
        shape,
        rel_err: err,
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradCheckError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
}

/// Cases `0..cases` in order.
pub fn grad_suite(seed: u64, cases: usize) -> std::result::Result<Vec<GradCase>, GradCheckError> {
    (0..cases).map(|i| grad_case(seed, i)).collect()
}

fn dist_to_tensor(e: DistError) -> TensorError {
    match e {
        DistError::Tensor(t) => t,
        _ => TensorError::NonFinite("reparameterize"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap();
        let g = central_difference(|t| Ok(t.data().iter().map(|v| v * v).sum()), &x, 1e-4).unwrap();
        let expect = Tensor::vector(vec![2.0, -4.0, 1.0]).unwrap();
        assert!(relative_error(&g, &expect) < 1e-9);
    }

    #[test]
    fn relative_error_of_zero_vectors() {
        let z = Tensor::zeros(vec![3]);
        assert_eq!(relative_error(&z, &z), 0.0);
    }

    #[test]
    fn every_op_within_tolerance() {
        for case in grad_suite(7, 2 * GRAD_OPS.len()).unwrap() {
            assert!(case.passed(), "{case:?}");
        }
    }
}
