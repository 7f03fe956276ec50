use std::sync::atomic::{AtomicU64, Ordering};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::kernels;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u64,
    pub(crate) idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

#[derive(Clone)]
pub(crate) enum Op<S> {
    /// Leaf with `requires_grad` set, or any node that depends on no such leaf.
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `alpha * x + beta`
    Affine(Var, S, S),
    MulConst(Var, Array<S>),
    Powf(Var, S),
    Sum(Var),
    BroadcastScalar(Var),
    LeakyRelu(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Conv1d { x: Var, w: Var },
    Conv1dInputGrad { g: Var, w: Var },
    Conv1dWeightGrad { x: Var, g: Var },
    AddBias(Var, Var),
    ChannelSum(Var),
    BroadcastChannel(Var),
    Narrow { x: Var, start: usize },
    PadChannels { x: Var, start: usize },
    Concat(Vec<Var>),
    Reshape(Var),
    MaskedSqNorm(Var, Array<S>),
}

impl<S> Op<S> {
    pub(crate) fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddBias(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Conv1d { x, w } => vec![*x, *w],
            Conv1dInputGrad { g, w } => vec![*g, *w],
            Conv1dWeightGrad { x, g, .. } => vec![*x, *g],
            Affine(x, ..)
            | MulConst(x, _)
            | Powf(x, _)
            | Sum(x)
            | BroadcastScalar(x)
            | LeakyRelu(x, _)
            | Sigmoid(x)
            | Tanh(x)
            | ChannelSum(x)
            | BroadcastChannel(x)
            | Reshape(x)
            | MaskedSqNorm(x, _) => vec![*x],
            Narrow { x, .. } | PadChannels { x, .. } => vec![*x],
            Concat(parts) => parts.clone(),
        }
    }
}

pub(crate) struct Node<S> {
    pub(crate) value: Array<S>,
    pub(crate) op: Op<S>,
    pub(crate) requires_grad: bool,
}

/// A recording context. Every operation appends a node holding its value
/// and how it was computed; gradients are obtained with [`Tape::grad`].
///
/// A tape has a single owner. Values are immutable once recorded.
pub struct Tape<S> {
    id: u64,
    pub(crate) nodes: Vec<Node<S>>,
    check_finite: bool,
    warnings: Vec<String>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), check_finite: true, warnings: Vec::new() }
    }

    /// Toggles the non-finite check run after every recorded operation.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn checks_finite(&self) -> bool {
        self.check_finite
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Warnings raised so far, e.g. gradients requested for unreachable nodes.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub(crate) fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    /// A differentiable leaf.
    pub fn variable(&mut self, value: Array<S>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        self.last()
    }

    pub fn constant(&mut self, value: Array<S>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        self.last()
    }

    /// Same value as `v`, cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn last(&self) -> Var {
        Var { tape: self.id, idx: self.nodes.len() - 1 }
    }

    pub(crate) fn var_at(&self, idx: usize) -> Var {
        Var { tape: self.id, idx }
    }

    pub(crate) fn owns(&self, v: Var) -> bool {
        v.tape == self.id && v.idx < self.nodes.len()
    }

    /// # Panics
    /// If `v` was recorded on a different tape.
    pub fn value(&self, v: Var) -> &Array<S> {
        assert_eq!(v.tape, self.id, "node used outside its recording context");
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    pub(crate) fn op(&self, v: Var) -> &Op<S> {
        &self.nodes[v.idx].op
    }

    fn push(&mut self, name: &str, value: Array<S>, op: Op<S>) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Numerical { op: name.to_string() });
        }
        let parents = op.parents();
        if let Some(bad) = parents.iter().find(|p| p.tape != self.id || p.idx >= self.nodes.len()) {
            return Err(Error::Internal(format!(
                "`{name}` refers to node {} of another recording context",
                bad.idx
            )));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.idx].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(self.last())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b))
    }

    /// `alpha * x + beta`, elementwise.
    pub fn affine(&mut self, x: Var, alpha: S, beta: S) -> Result<Var> {
        let v = self.value(x).map(|e| alpha * e + beta);
        self.push("affine", v, Op::Affine(x, alpha, beta))
    }

    pub fn scale(&mut self, x: Var, alpha: S) -> Result<Var> {
        self.affine(x, alpha, S::zero())
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -S::one(), S::zero())
    }

    /// Elementwise product with a constant array.
    pub fn mul_const(&mut self, x: Var, c: Array<S>) -> Result<Var> {
        let v = self.value(x).zip_map(&c, |a, b| a * b)?;
        self.push("mul_const", v, Op::MulConst(x, c))
    }

    pub fn powf(&mut self, x: Var, p: S) -> Result<Var> {
        let v = self.value(x).map(|e| e.powf(p));
        self.push("powf", v, Op::Powf(x, p))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Array::scalar(self.value(x).sum());
        self.push("sum", v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::shape("mean of an empty array"));
        }
        let s = self.sum(x)?;
        self.scale(s, S::one() / S::lit(n as f64))
    }

    /// Repeats a single-element node over `shape`.
    pub fn broadcast_scalar(&mut self, s: Var, shape: &[usize]) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::shape(format!("broadcast_scalar of shape {:?}", sv.shape())));
        }
        let v = Array::full(shape, sv.item());
        self.push("broadcast_scalar", v, Op::BroadcastScalar(s))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: S) -> Result<Var> {
        let v = kernels::leaky_relu(self.value(x), slope);
        self.push("leaky_relu", v, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = kernels::sigmoid(self.value(x));
        self.push("sigmoid", v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = kernels::tanh(self.value(x));
        self.push("tanh", v, Op::Tanh(x))
    }

    /// `op(a) * op(b)` with optional transposes of 2-d operands.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b), ta, tb)?;
        self.push("matmul", v, Op::MatMul { a, b, ta, tb })
    }

    /// Zero-padded, stride-1 convolution over time; no bias.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let v = kernels::conv1d(self.value(x), self.value(w))?;
        self.push("conv1d", v, Op::Conv1d { x, w })
    }

    pub fn conv1d_input_grad(&mut self, g: Var, w: Var) -> Result<Var> {
        let v = kernels::conv1d_input_grad(self.value(g), self.value(w))?;
        self.push("conv1d_input_grad", v, Op::Conv1dInputGrad { g, w })
    }

    pub fn conv1d_weight_grad(&mut self, x: Var, g: Var, k: usize) -> Result<Var> {
        let v = kernels::conv1d_weight_grad(self.value(x), self.value(g), k)?;
        self.push("conv1d_weight_grad", v, Op::Conv1dWeightGrad { x, g })
    }

    /// Adds a per-channel bias along axis 1.
    pub fn add_bias(&mut self, y: Var, bias: Var) -> Result<Var> {
        let v = kernels::add_bias(self.value(y), self.value(bias))?;
        self.push("add_bias", v, Op::AddBias(y, bias))
    }

    pub fn channel_sum(&mut self, x: Var) -> Result<Var> {
        let v = kernels::channel_sum(self.value(x))?;
        self.push("channel_sum", v, Op::ChannelSum(x))
    }

    pub fn broadcast_channel(&mut self, v: Var, shape: &[usize]) -> Result<Var> {
        let out = kernels::broadcast_channel(self.value(v), shape)?;
        self.push("broadcast_channel", out, Op::BroadcastChannel(v))
    }

    /// Channels `start..start+len` along axis 1.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = kernels::narrow(self.value(x), start, len)?;
        self.push("narrow", v, Op::Narrow { x, start })
    }

    pub fn pad_channels(&mut self, x: Var, start: usize, total: usize) -> Result<Var> {
        let v = kernels::pad_channels(self.value(x), start, total)?;
        self.push("pad_channels", v, Op::PadChannels { x, start })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let arrays: Vec<&Array<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = kernels::concat(&arrays)?;
        self.push("concat", v, Op::Concat(parts.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape.to_vec())?;
        self.push("reshape", v, Op::Reshape(x))
    }

    /// `sum(mask * x^2)` for a constant, possibly weighted, mask.
    pub fn masked_sq_norm(&mut self, x: Var, mask: Array<S>) -> Result<Var> {
        let v = Array::scalar(kernels::masked_sq_norm(self.value(x), &mask)?);
        self.push("masked_sq_norm", v, Op::MaskedSqNorm(x, mask))
    }

    /// `sum(x^2)`.
    pub fn sq_norm(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        self.sum(sq)
    }
}
