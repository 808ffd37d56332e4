//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass in topological
//! order. [`Tape::backward`] walks it once in reverse and accumulates
//! gradients into the leaves created with [`Tape::leaf`]. Build a fresh tape
//! per forward pass and drop it afterwards.

use std::cell::RefCell;

use crate::tensor::{
    broadcast_index_map, broadcast_shape, matmul_raw, transpose_raw, Result, Tensor, TensorError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Sqrt,
    Neg,
}

impl Elementwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Binary(Elementwise, usize, usize),
    Unary(Elementwise, usize),
    MatMul(usize, usize),
    Reduce {
        kind: Reduction,
        input: usize,
        /// For each output element, the flat input indices it covers
        /// (max: only the selected index).
        sources: Vec<Vec<usize>>,
    },
    Reshape(usize),
    Transpose(usize),
    Norm(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_finite(data: &[f64], what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite(what))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A value treated as constant by [`Tape::backward`].
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, var: Var<'_>) -> Tensor {
        self.nodes.borrow()[var.id].value.clone()
    }

    /// Accumulated gradient of a leaf, if a backward pass reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads.borrow().get(var.id).cloned().flatten()
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Applies any [`Elementwise`] kind. Binary kinds require `b`.
    pub fn elementwise<'t>(
        &'t self,
        kind: Elementwise,
        a: Var<'t>,
        b: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => self.unary(kind, a),
            (true, None) => Err(TensorError::DomainError("binary op without rhs")),
            (false, Some(_)) => Err(TensorError::DomainError("unary op with rhs")),
        }
    }

    fn binary<'t>(&'t self, kind: Elementwise, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.id], &nodes[b.id]);
            let out_shape = broadcast_shape(na.value.shape(), nb.value.shape())?;
            let (ad, bd) = (na.value.data(), nb.value.data());
            let data: Vec<f64> = if na.value.shape() == nb.value.shape() {
                binary_apply(kind, ad.iter().copied().zip(bd.iter().copied()))?
            } else {
                let ma = broadcast_index_map(na.value.shape(), &out_shape);
                let mb = broadcast_index_map(nb.value.shape(), &out_shape);
                binary_apply(kind, ma.iter().zip(&mb).map(|(&i, &j)| (ad[i], bd[j])))?
            };
            check_finite(&data, "elementwise")?;
            (
                Tensor::from_parts(out_shape, data),
                na.requires_grad || nb.requires_grad,
            )
        };
        Ok(self.push(value, Op::Binary(kind, a.id, b.id), requires_grad))
    }

    fn unary<'t>(&'t self, kind: Elementwise, a: Var<'t>) -> Result<Var<'t>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.id];
            let x = na.value.data();
            let data: Vec<f64> = match kind {
                Elementwise::Exp => x.iter().map(|v| v.exp()).collect(),
                Elementwise::Log => {
                    if x.iter().any(|&v| v <= 0.0) {
                        return Err(TensorError::DomainError("log of non-positive value"));
                    }
                    x.iter().map(|v| v.ln()).collect()
                }
                Elementwise::Tanh => x.iter().map(|v| v.tanh()).collect(),
                Elementwise::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
                Elementwise::Softplus => x.iter().map(|&v| softplus(v)).collect(),
                Elementwise::Sqrt => {
                    if x.iter().any(|&v| v < 0.0) {
                        return Err(TensorError::DomainError("sqrt of negative value"));
                    }
                    x.iter().map(|v| v.sqrt()).collect()
                }
                Elementwise::Neg => x.iter().map(|v| -v).collect(),
                _ => unreachable!("binary kind routed to unary"),
            };
            check_finite(&data, "elementwise")?;
            (
                Tensor::from_parts(na.value.shape().to_vec(), data),
                na.requires_grad,
            )
        };
        Ok(self.push(value, Op::Unary(kind, a.id), requires_grad))
    }

    pub fn matmul<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.id], &nodes[b.id]);
            let v = na.value.matmul(&nb.value)?;
            check_finite(v.data(), "matmul")?;
            (v, na.requires_grad || nb.requires_grad)
        };
        Ok(self.push(value, Op::MatMul(a.id, b.id), requires_grad))
    }

    /// Reduces over `axis`, or over everything when `axis` is `None`.
    /// Max routes its subgradient to the lowest flat index among ties.
    pub fn reduce<'t>(&'t self, kind: Reduction, a: Var<'t>, axis: Option<usize>) -> Result<Var<'t>> {
        let (value, sources, requires_grad) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.id];
            let shape = na.value.shape();
            let x = na.value.data();
            let (out_shape, groups): (Vec<usize>, Vec<Vec<usize>>) = match axis {
                None => (Vec::new(), vec![(0..x.len()).collect()]),
                Some(ax) => {
                    if ax >= shape.len() {
                        return Err(TensorError::InvalidAxis {
                            axis: ax,
                            rank: shape.len(),
                        });
                    }
                    let outer: usize = shape[..ax].iter().product();
                    let len = shape[ax];
                    let inner: usize = shape[ax + 1..].iter().product();
                    let mut out_shape = shape.to_vec();
                    out_shape.remove(ax);
                    let mut groups = Vec::with_capacity(outer * inner);
                    for o in 0..outer {
                        for i in 0..inner {
                            groups.push((0..len).map(|l| (o * len + l) * inner + i).collect());
                        }
                    }
                    (out_shape, groups)
                }
            };
            if groups.iter().any(|g| g.is_empty()) {
                return Err(TensorError::InvalidAxis {
                    axis: axis.unwrap_or(0),
                    rank: shape.len(),
                });
            }
            let mut data = Vec::with_capacity(groups.len());
            let mut sources = Vec::with_capacity(groups.len());
            for g in groups {
                match kind {
                    Reduction::Sum => {
                        data.push(g.iter().map(|&i| x[i]).sum());
                        sources.push(g);
                    }
                    Reduction::Mean => {
                        data.push(g.iter().map(|&i| x[i]).sum::<f64>() / g.len() as f64);
                        sources.push(g);
                    }
                    Reduction::Max => {
                        let mut best = g[0];
                        for &i in &g[1..] {
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                        data.push(x[best]);
                        sources.push(vec![best]);
                    }
                }
            }
            check_finite(&data, "reduce")?;
            (Tensor::from_parts(out_shape, data), sources, na.requires_grad)
        };
        Ok(self.push(
            value,
            Op::Reduce {
                kind,
                input: a.id,
                sources,
            },
            requires_grad,
        ))
    }

    pub fn reshape<'t>(&'t self, a: Var<'t>, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            (nodes[a.id].value.reshape(shape)?, nodes[a.id].requires_grad)
        };
        Ok(self.push(value, Op::Reshape(a.id), requires_grad))
    }

    pub fn transpose<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            (nodes[a.id].value.transpose()?, nodes[a.id].requires_grad)
        };
        Ok(self.push(value, Op::Transpose(a.id), requires_grad))
    }

    /// Euclidean norm over all elements. The subgradient at the origin is zero.
    pub fn norm<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            (
                Tensor::scalar(nodes[a.id].value.norm()),
                nodes[a.id].requires_grad,
            )
        };
        check_finite(value.data(), "norm")?;
        Ok(self.push(value, Op::Norm(a.id), requires_grad))
    }

    /// Reverse pass from a scalar root. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if root_node.value.len() != 1 {
            return Err(TensorError::NonScalarRoot(root_node.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        adj[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    let mut grads = self.grads.borrow_mut();
                    if grads.len() <= id {
                        grads.resize(id + 1, None);
                    }
                    let shape = node.value.shape().to_vec();
                    grads[id] = Some(match grads[id].take() {
                        Some(prev) => {
                            let mut d = prev.into_data();
                            d.iter_mut().zip(&g).for_each(|(p, q)| *p += q);
                            Tensor::from_parts(shape, d)
                        }
                        None => Tensor::from_parts(shape, g),
                    });
                }
                Op::Constant => {}
                Op::Unary(kind, a) => {
                    let x = nodes[*a].value.data();
                    let y = node.value.data();
                    let local: Vec<f64> = match kind {
                        Elementwise::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                        Elementwise::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                        Elementwise::Tanh => {
                            g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()
                        }
                        Elementwise::Sigmoid => {
                            g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()
                        }
                        Elementwise::Softplus => {
                            g.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect()
                        }
                        Elementwise::Sqrt => {
                            g.iter().zip(y).map(|(g, y)| g / (2.0 * y)).collect()
                        }
                        Elementwise::Neg => g.iter().map(|g| -g).collect(),
                        _ => unreachable!(),
                    };
                    check_finite(&local, "backward")?;
                    accumulate(&mut adj, &nodes, *a, local);
                }
                Op::Binary(kind, a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let out_shape = node.value.shape();
                    let same = va.shape() == out_shape && vb.shape() == out_shape;
                    let (ma, mb) = if same {
                        (None, None)
                    } else {
                        (
                            Some(broadcast_index_map(va.shape(), out_shape)),
                            Some(broadcast_index_map(vb.shape(), out_shape)),
                        )
                    };
                    let ia = |k: usize| ma.as_ref().map_or(k, |m| m[k]);
                    let ib = |k: usize| mb.as_ref().map_or(k, |m| m[k]);
                    let (ad, bd) = (va.data(), vb.data());
                    if nodes[*a].requires_grad {
                        let mut ga = vec![0.0; ad.len()];
                        for (k, gk) in g.iter().enumerate() {
                            let d = match kind {
                                Elementwise::Add | Elementwise::Sub => *gk,
                                Elementwise::Mul => gk * bd[ib(k)],
                                Elementwise::Div => gk / bd[ib(k)],
                                _ => unreachable!(),
                            };
                            ga[ia(k)] += d;
                        }
                        check_finite(&ga, "backward")?;
                        accumulate(&mut adj, &nodes, *a, ga);
                    }
                    if nodes[*b].requires_grad {
                        let mut gb = vec![0.0; bd.len()];
                        for (k, gk) in g.iter().enumerate() {
                            let d = match kind {
                                Elementwise::Add => *gk,
                                Elementwise::Sub => -gk,
                                Elementwise::Mul => gk * ad[ia(k)],
                                Elementwise::Div => {
                                    let bv = bd[ib(k)];
                                    -gk * ad[ia(k)] / (bv * bv)
                                }
                                _ => unreachable!(),
                            };
                            gb[ib(k)] += d;
                        }
                        check_finite(&gb, "backward")?;
                        accumulate(&mut adj, &nodes, *b, gb);
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, k, p) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    if nodes[*a].requires_grad {
                        let bt = transpose_raw(vb.data(), k, p);
                        accumulate(&mut adj, &nodes, *a, matmul_raw(&g, &bt, m, p, k));
                    }
                    if nodes[*b].requires_grad {
                        let at = transpose_raw(va.data(), m, k);
                        accumulate(&mut adj, &nodes, *b, matmul_raw(&at, &g, k, m, p));
                    }
                }
                Op::Reduce {
                    kind,
                    input,
                    sources,
                } => {
                    let mut gi = vec![0.0; nodes[*input].value.len()];
                    for (gk, src) in g.iter().zip(sources) {
                        let share = match kind {
                            Reduction::Mean => gk / src.len() as f64,
                            Reduction::Sum | Reduction::Max => *gk,
                        };
                        for &i in src {
                            gi[i] += share;
                        }
                    }
                    accumulate(&mut adj, &nodes, *input, gi);
                }
                Op::Reshape(a) => accumulate(&mut adj, &nodes, *a, g),
                Op::Transpose(a) => {
                    let s = node.value.shape();
                    accumulate(&mut adj, &nodes, *a, transpose_raw(&g, s[0], s[1]));
                }
                Op::Norm(a) => {
                    let x = nodes[*a].value.data();
                    let n = node.value.data()[0];
                    let local = if n == 0.0 {
                        vec![0.0; x.len()]
                    } else {
                        x.iter().map(|v| g[0] * v / n).collect()
                    };
                    check_finite(&local, "backward")?;
                    accumulate(&mut adj, &nodes, *a, local);
                }
            }
        }
        Ok(())
    }
}

fn binary_apply(kind: Elementwise, pairs: impl Iterator<Item = (f64, f64)>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.size_hint().0);
    for (a, b) in pairs {
        out.push(match kind {
            Elementwise::Add => a + b,
            Elementwise::Sub => a - b,
            Elementwise::Mul => a * b,
            Elementwise::Div => {
                if b == 0.0 {
                    return Err(TensorError::DomainError("division by zero"));
                }
                a / b
            }
            _ => unreachable!("unary kind routed to binary"),
        });
    }
    Ok(out)
}

fn accumulate(adj: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut adj[id] {
        Some(prev) => prev.iter_mut().zip(&g).for_each(|(p, q)| *p += q),
        slot @ None => *slot = Some(g),
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// The value of a one-element variable.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Elementwise::Add, self, rhs)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Elementwise::Sub, self, rhs)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Elementwise::Mul, self, rhs)
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Elementwise::Div, self, rhs)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.add(self.tape.scalar(c))
    }

    pub fn mul_scalar(self, c: f64) -> Result<Var<'t>> {
        self.mul(self.tape.scalar(c))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.tape.unary(Elementwise::Exp, self)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.tape.unary(Elementwise::Log, self)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.tape.unary(Elementwise::Tanh, self)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.tape.unary(Elementwise::Sigmoid, self)
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.tape.unary(Elementwise::Softplus, self)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.tape.unary(Elementwise::Sqrt, self)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.tape.unary(Elementwise::Neg, self)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.matmul(self, rhs)
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.tape.reduce(Reduction::Sum, self, None)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.tape.reduce(Reduction::Mean, self, None)
    }

    pub fn max(self) -> Result<Var<'t>> {
        self.tape.reduce(Reduction::Max, self, None)
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.tape.reduce(Reduction::Sum, self, Some(axis))
    }

    pub fn max_axis(self, axis: usize) -> Result<Var<'t>> {
        self.tape.reduce(Reduction::Max, self, Some(axis))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        self.tape.reshape(self, shape)
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.tape.transpose(self)
    }

    pub fn norm(self) -> Result<Var<'t>> {
        self.tape.norm(self)
    }
}
