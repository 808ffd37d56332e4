//! Scalar objectives over a prompt matrix `z` of shape `rows × cols`.
//!
//! The mask loss of a [`ToyTask`](crate::decoder::ToyTask), the analytic
//! [landscapes](crate::landscapes) and the curvature test functions all
//! implement [`Objective`], so the optimizers and curvature estimators work on
//! any of them.

use crate::tape::{Tape, Var};
use crate::tensor::{Result, Tensor};

pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    /// Shape of the optimization variable as `(rows, cols)`.
    fn shape(&self) -> (usize, usize);

    fn loss<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>>;

    /// Plain evaluation. Implementors with a cheaper closed form override it.
    fn value(&self, z: &Tensor) -> Result<f64> {
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        Ok(self.loss(&tape, zv)?.item())
    }

    fn value_and_grad(&self, z: &Tensor) -> Result<(f64, Tensor)> {
        let tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let l = self.loss(&tape, zv)?;
        tape.backward(l)?;
        let g = tape
            .grad(zv)
            .unwrap_or_else(|| Tensor::zeros(z.shape().to_vec()));
        Ok((l.item(), g))
    }

    /// Named task-level quality measures reported for a final point.
    fn metrics(&self, _z: &Tensor) -> Result<Vec<(&'static str, f64)>> {
        Ok(Vec::new())
    }
}

/// Wraps a closure pair as an [`Objective`]. Handy in tests and for ad-hoc
/// functions.
pub struct FnObjective<F, G> {
    name: String,
    shape: (usize, usize),
    on_tape: F,
    plain: G,
}

impl<F, G> FnObjective<F, G>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> + Send + Sync,
    G: Fn(&Tensor) -> Result<f64> + Send + Sync,
{
    pub fn new(name: impl Into<String>, shape: (usize, usize), on_tape: F, plain: G) -> Self {
        Self {
            name: name.into(),
            shape,
            on_tape,
            plain,
        }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> + Send + Sync,
    G: Fn(&Tensor) -> Result<f64> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn shape(&self) -> (usize, usize) {
        self.shape
    }

    fn loss<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>> {
        (self.on_tape)(tape, z)
    }

    fn value(&self, z: &Tensor) -> Result<f64> {
        (self.plain)(z)
    }
}
