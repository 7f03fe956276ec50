//! Reverse sweep.
//!
//! The vector-Jacobian rules are written once against [`Backend`]. The raw
//! backend evaluates them on plain arrays; the graph backend records them on
//! the tape, so the returned gradients can be differentiated again.

use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::kernels;
use super::tape::{Op, Tape, Var};

pub(crate) trait Backend<S: Scalar> {
    type V: Clone;

    /// A forward node used as an operand of a backward rule.
    fn node(&mut self, v: Var) -> Self::V;
    /// Numeric value of a forward node.
    fn value(&self, v: Var) -> Array<S>;
    fn op(&self, v: Var) -> Op<S>;
    fn var_at(&self, idx: usize) -> Var;
    fn constant(&mut self, a: Array<S>) -> Self::V;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn affine(&mut self, x: &Self::V, alpha: S, beta: S) -> Result<Self::V>;
    fn mul_const(&mut self, x: &Self::V, c: &Array<S>) -> Result<Self::V>;
    fn powf(&mut self, x: &Self::V, p: S) -> Result<Self::V>;
    fn sum(&mut self, x: &Self::V) -> Result<Self::V>;
    fn broadcast_scalar(&mut self, s: &Self::V, shape: &[usize]) -> Result<Self::V>;
    fn matmul(&mut self, a: &Self::V, b: &Self::V, ta: bool, tb: bool) -> Result<Self::V>;
    fn conv1d(&mut self, x: &Self::V, w: &Self::V) -> Result<Self::V>;
    fn conv1d_input_grad(&mut self, g: &Self::V, w: &Self::V) -> Result<Self::V>;
    fn conv1d_weight_grad(&mut self, x: &Self::V, g: &Self::V, k: usize) -> Result<Self::V>;
    fn channel_sum(&mut self, x: &Self::V) -> Result<Self::V>;
    fn broadcast_channel(&mut self, v: &Self::V, shape: &[usize]) -> Result<Self::V>;
    fn narrow(&mut self, x: &Self::V, start: usize, len: usize) -> Result<Self::V>;
    fn pad_channels(&mut self, x: &Self::V, start: usize, total: usize) -> Result<Self::V>;
    fn reshape(&mut self, x: &Self::V, shape: &[usize]) -> Result<Self::V>;
}

/// Evaluates backward rules directly on arrays.
struct Raw<'t, S> {
    tape: &'t Tape<S>,
}

impl<S: Scalar> Raw<'_, S> {
    fn checked(&self, name: &str, a: Array<S>) -> Result<Array<S>> {
        if self.tape.checks_finite() && !a.all_finite() {
            return Err(Error::Numerical { op: format!("{name} (backward)") });
        }
        Ok(a)
    }
}

impl<S: Scalar> Backend<S> for Raw<'_, S> {
    type V = Array<S>;

    fn node(&mut self, v: Var) -> Array<S> {
        self.tape.value(v).clone()
    }
    fn value(&self, v: Var) -> Array<S> {
        self.tape.value(v).clone()
    }
    fn op(&self, v: Var) -> Op<S> {
        self.tape.op(v).clone()
    }
    fn var_at(&self, idx: usize) -> Var {
        self.tape.var_at(idx)
    }
    fn constant(&mut self, a: Array<S>) -> Array<S> {
        a
    }
    fn add(&mut self, a: &Array<S>, b: &Array<S>) -> Result<Array<S>> {
        let r = a.zip_map(b, |x, y| x + y)?;
        self.checked("add", r)
    }
    fn mul(&mut self, a: &Array<S>, b: &Array<S>) -> Result<Array<S>> {
        let r = a.zip_map(b, |x, y| x * y)?;
        self.checked("mul", r)
    }
    fn affine(&mut self, x: &Array<S>, alpha: S, beta: S) -> Result<Array<S>> {
        self.checked("affine", x.map(|e| alpha * e + beta))
    }
    fn mul_const(&mut self, x: &Array<S>, c: &Array<S>) -> Result<Array<S>> {
        let r = x.zip_map(c, |a, b| a * b)?;
        self.checked("mul_const", r)
    }
    fn powf(&mut self, x: &Array<S>, p: S) -> Result<Array<S>> {
        self.checked("powf", x.map(|e| e.powf(p)))
    }
    fn sum(&mut self, x: &Array<S>) -> Result<Array<S>> {
        self.checked("sum", Array::scalar(x.sum()))
    }
    fn broadcast_scalar(&mut self, s: &Array<S>, shape: &[usize]) -> Result<Array<S>> {
        Ok(Array::full(shape, s.item()))
    }
    fn matmul(&mut self, a: &Array<S>, b: &Array<S>, ta: bool, tb: bool) -> Result<Array<S>> {
        let r = kernels::matmul(a, b, ta, tb)?;
        self.checked("matmul", r)
    }
    fn conv1d(&mut self, x: &Array<S>, w: &Array<S>) -> Result<Array<S>> {
        let r = kernels::conv1d(x, w)?;
        self.checked("conv1d", r)
    }
    fn conv1d_input_grad(&mut self, g: &Array<S>, w: &Array<S>) -> Result<Array<S>> {
        let r = kernels::conv1d_input_grad(g, w)?;
        self.checked("conv1d_input_grad", r)
    }
    fn conv1d_weight_grad(&mut self, x: &Array<S>, g: &Array<S>, k: usize) -> Result<Array<S>> {
        let r = kernels::conv1d_weight_grad(x, g, k)?;
        self.checked("conv1d_weight_grad", r)
    }
    fn channel_sum(&mut self, x: &Array<S>) -> Result<Array<S>> {
        kernels::channel_sum(x)
    }
    fn broadcast_channel(&mut self, v: &Array<S>, shape: &[usize]) -> Result<Array<S>> {
        kernels::broadcast_channel(v, shape)
    }
    fn narrow(&mut self, x: &Array<S>, start: usize, len: usize) -> Result<Array<S>> {
        kernels::narrow(x, start, len)
    }
    fn pad_channels(&mut self, x: &Array<S>, start: usize, total: usize) -> Result<Array<S>> {
        kernels::pad_channels(x, start, total)
    }
    fn reshape(&mut self, x: &Array<S>, shape: &[usize]) -> Result<Array<S>> {
        x.reshape(shape.to_vec())
    }
}

/// Records backward rules on the tape itself.
struct Graph<'t, S> {
    tape: &'t mut Tape<S>,
}

impl<S: Scalar> Backend<S> for Graph<'_, S> {
    type V = Var;

    fn node(&mut self, v: Var) -> Var {
        v
    }
    fn value(&self, v: Var) -> Array<S> {
        self.tape.value(v).clone()
    }
    fn op(&self, v: Var) -> Op<S> {
        self.tape.op(v).clone()
    }
    fn var_at(&self, idx: usize) -> Var {
        self.tape.var_at(idx)
    }
    fn constant(&mut self, a: Array<S>) -> Var {
        self.tape.constant(a)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.mul(*a, *b)
    }
    fn affine(&mut self, x: &Var, alpha: S, beta: S) -> Result<Var> {
        self.tape.affine(*x, alpha, beta)
    }
    fn mul_const(&mut self, x: &Var, c: &Array<S>) -> Result<Var> {
        self.tape.mul_const(*x, c.clone())
    }
    fn powf(&mut self, x: &Var, p: S) -> Result<Var> {
        self.tape.powf(*x, p)
    }
    fn sum(&mut self, x: &Var) -> Result<Var> {
        self.tape.sum(*x)
    }
    fn broadcast_scalar(&mut self, s: &Var, shape: &[usize]) -> Result<Var> {
        self.tape.broadcast_scalar(*s, shape)
    }
    fn matmul(&mut self, a: &Var, b: &Var, ta: bool, tb: bool) -> Result<Var> {
        self.tape.matmul(*a, *b, ta, tb)
    }
    fn conv1d(&mut self, x: &Var, w: &Var) -> Result<Var> {
        self.tape.conv1d(*x, *w)
    }
    fn conv1d_input_grad(&mut self, g: &Var, w: &Var) -> Result<Var> {
        self.tape.conv1d_input_grad(*g, *w)
    }
    fn conv1d_weight_grad(&mut self, x: &Var, g: &Var, k: usize) -> Result<Var> {
        self.tape.conv1d_weight_grad(*x, *g, k)
    }
    fn channel_sum(&mut self, x: &Var) -> Result<Var> {
        self.tape.channel_sum(*x)
    }
    fn broadcast_channel(&mut self, v: &Var, shape: &[usize]) -> Result<Var> {
        self.tape.broadcast_channel(*v, shape)
    }
    fn narrow(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        self.tape.narrow(*x, start, len)
    }
    fn pad_channels(&mut self, x: &Var, start: usize, total: usize) -> Result<Var> {
        self.tape.pad_channels(*x, start, total)
    }
    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        self.tape.reshape(*x, shape)
    }
}

/// Cotangents of the parents of `out`, restricted to those `need` accepts.
fn vjp<S: Scalar, B: Backend<S>>(
    b: &mut B,
    op: &Op<S>,
    out: Var,
    g: &B::V,
    need: &dyn Fn(Var) -> bool,
) -> Result<Vec<(Var, B::V)>> {
    let mut res = Vec::with_capacity(2);
    let neg_one = -S::one();
    match op {
        Op::Leaf => {}
        Op::Add(x, y) => {
            if need(*x) {
                res.push((*x, g.clone()));
            }
            if need(*y) {
                res.push((*y, g.clone()));
            }
        }
        Op::Sub(x, y) => {
            if need(*x) {
                res.push((*x, g.clone()));
            }
            if need(*y) {
                res.push((*y, b.affine(g, neg_one, S::zero())?));
            }
        }
        Op::Mul(x, y) => {
            if need(*x) {
                let yv = b.node(*y);
                res.push((*x, b.mul(g, &yv)?));
            }
            if need(*y) {
                let xv = b.node(*x);
                res.push((*y, b.mul(g, &xv)?));
            }
        }
        Op::Affine(x, alpha, _) => {
            if need(*x) {
                res.push((*x, b.affine(g, *alpha, S::zero())?));
            }
        }
        Op::MulConst(x, c) => {
            if need(*x) {
                res.push((*x, b.mul_const(g, c)?));
            }
        }
        Op::Powf(x, p) => {
            if need(*x) {
                let xv = b.node(*x);
                let d = b.powf(&xv, *p - S::one())?;
                let d = b.affine(&d, *p, S::zero())?;
                res.push((*x, b.mul(g, &d)?));
            }
        }
        Op::Sum(x) => {
            if need(*x) {
                let shape = b.value(*x).shape().to_vec();
                res.push((*x, b.broadcast_scalar(g, &shape)?));
            }
        }
        Op::BroadcastScalar(s) => {
            if need(*s) {
                res.push((*s, b.sum(g)?));
            }
        }
        Op::LeakyRelu(x, slope) => {
            if need(*x) {
                let mask = kernels::leaky_relu_slope(&b.value(*x), *slope);
                res.push((*x, b.mul_const(g, &mask)?));
            }
        }
        Op::Sigmoid(x) => {
            if need(*x) {
                let y = b.node(out);
                let one_minus = b.affine(&y, neg_one, S::one())?;
                let d = b.mul(&y, &one_minus)?;
                res.push((*x, b.mul(g, &d)?));
            }
        }
        Op::Tanh(x) => {
            if need(*x) {
                let y = b.node(out);
                let sq = b.mul(&y, &y)?;
                let d = b.affine(&sq, neg_one, S::one())?;
                res.push((*x, b.mul(g, &d)?));
            }
        }
        Op::MatMul { a, b: rhs, ta, tb } => {
            let (ta, tb) = (*ta, *tb);
            if need(*a) {
                let bv = b.node(*rhs);
                let ga = if ta { b.matmul(&bv, g, tb, true)? } else { b.matmul(g, &bv, false, !tb)? };
                res.push((*a, ga));
            }
            if need(*rhs) {
                let av = b.node(*a);
                let gb = if tb { b.matmul(g, &av, true, ta)? } else { b.matmul(&av, g, !ta, false)? };
                res.push((*rhs, gb));
            }
        }
        Op::Conv1d { x, w } => {
            if need(*x) {
                let wv = b.node(*w);
                res.push((*x, b.conv1d_input_grad(g, &wv)?));
            }
            if need(*w) {
                let k = b.value(*w).dim(2);
                let xv = b.node(*x);
                res.push((*w, b.conv1d_weight_grad(&xv, g, k)?));
            }
        }
        Op::Conv1dInputGrad { g: cot, w } => {
            // output = d<cot, conv(x, w)>/dx, bilinear in (cot, w)
            if need(*cot) {
                let wv = b.node(*w);
                res.push((*cot, b.conv1d(g, &wv)?));
            }
            if need(*w) {
                let k = b.value(*w).dim(2);
                let cv = b.node(*cot);
                res.push((*w, b.conv1d_weight_grad(g, &cv, k)?));
            }
        }
        Op::Conv1dWeightGrad { x, g: cot, .. } => {
            // output = d<cot, conv(x, w)>/dw, bilinear in (x, cot)
            if need(*x) {
                let cv = b.node(*cot);
                res.push((*x, b.conv1d_input_grad(&cv, g)?));
            }
            if need(*cot) {
                let xv = b.node(*x);
                res.push((*cot, b.conv1d(&xv, g)?));
            }
        }
        Op::AddBias(y, bias) => {
            if need(*y) {
                res.push((*y, g.clone()));
            }
            if need(*bias) {
                res.push((*bias, b.channel_sum(g)?));
            }
        }
        Op::ChannelSum(x) => {
            if need(*x) {
                let shape = b.value(*x).shape().to_vec();
                res.push((*x, b.broadcast_channel(g, &shape)?));
            }
        }
        Op::BroadcastChannel(v) => {
            if need(*v) {
                res.push((*v, b.channel_sum(g)?));
            }
        }
        Op::Narrow { x, start } => {
            if need(*x) {
                let total = b.value(*x).dim(1);
                res.push((*x, b.pad_channels(g, *start, total)?));
            }
        }
        Op::PadChannels { x, start } => {
            if need(*x) {
                let len = b.value(*x).dim(1);
                res.push((*x, b.narrow(g, *start, len)?));
            }
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = b.value(*p).dim(1);
                if need(*p) {
                    res.push((*p, b.narrow(g, offset, len)?));
                }
                offset += len;
            }
        }
        Op::Reshape(x) => {
            if need(*x) {
                let shape = b.value(*x).shape().to_vec();
                res.push((*x, b.reshape(g, &shape)?));
            }
        }
        Op::MaskedSqNorm(x, mask) => {
            if need(*x) {
                let shape = b.value(*x).shape().to_vec();
                let two_mask = mask.map(|m| m + m);
                let xv = b.node(*x);
                let weighted = b.mul_const(&xv, &two_mask)?;
                let gb = b.broadcast_scalar(g, &shape)?;
                res.push((*x, b.mul(&gb, &weighted)?));
            }
        }
    }
    Ok(res)
}

/// Runs the sweep from `output` down to the lowest `wrt`, returning the
/// cotangent reaching each `wrt` (or `None` when unreachable).
fn sweep<S: Scalar, B: Backend<S>>(
    b: &mut B,
    parents_of: &dyn Fn(usize) -> Vec<Var>,
    output: Var,
    wrt: &[Var],
) -> Result<Vec<Option<B::V>>> {
    let out_idx = output.idx;
    let lo = wrt.iter().map(|v| v.idx).min().unwrap_or(out_idx).min(out_idx);

    // dep[i - lo]: node i depends on some wrt node.
    let span = out_idx - lo + 1;
    let mut dep = vec![false; span];
    let mut is_target = vec![false; span];
    for w in wrt {
        if w.idx <= out_idx {
            dep[w.idx - lo] = true;
            is_target[w.idx - lo] = true;
        }
    }
    for i in lo..=out_idx {
        if dep[i - lo] {
            continue;
        }
        dep[i - lo] = parents_of(i).iter().any(|p| p.idx >= lo && dep[p.idx - lo]);
    }

    let mut grads: Vec<Option<B::V>> = vec![None; span];
    let mut found: Vec<Option<B::V>> = vec![None; span];
    if dep[out_idx - lo] {
        let shape = b.value(output).shape().to_vec();
        grads[out_idx - lo] = Some(b.constant(Array::ones(&shape)));
    }

    let need = |v: Var| v.idx >= lo && v.idx <= out_idx && dep[v.idx - lo];
    for i in (lo..=out_idx).rev() {
        let Some(g) = grads[i - lo].take() else { continue };
        if is_target[i - lo] {
            found[i - lo] = Some(g.clone());
        }
        let node = b.var_at(i);
        let op = b.op(node);
        for (parent, pg) in vjp(b, &op, node, &g, &need)? {
            let slot = &mut grads[parent.idx - lo];
            *slot = Some(match slot.take() {
                Some(acc) => b.add(&acc, &pg)?,
                None => pg,
            });
        }
    }

    Ok(wrt.iter().map(|w| if w.idx <= out_idx { found[w.idx - lo].clone() } else { None }).collect())
}

impl<S: Scalar> Tape<S> {
    /// Gradient of the scalar `output` with respect to each node in `wrt`.
    ///
    /// With `create_graph` the gradient computation is itself recorded, so the
    /// returned nodes can be differentiated again. A `wrt` node the output does
    /// not depend on gets a zero gradient and a warning.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        if !self.owns(output) || wrt.iter().any(|w| !self.owns(*w)) {
            return Err(Error::Internal("grad called with nodes of another recording context".into()));
        }
        if self.value(output).len() != 1 {
            return Err(Error::shape(format!(
                "grad needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        if let Some(w) = wrt.iter().find(|w| !self.requires_grad(**w)) {
            return Err(Error::Internal(format!("grad w.r.t. node {} that does not require grad", w.idx)));
        }

        let lo = wrt.iter().map(|v| v.idx).min().unwrap_or(output.idx).min(output.idx);
        let parents: Vec<Vec<Var>> =
            self.nodes[lo..=output.idx].iter().map(|n| n.op.parents()).collect();
        let parents_of = |i: usize| parents[i - lo].clone();

        let found: Vec<Option<Var>> = if create_graph {
            let mut g = Graph { tape: self };
            sweep(&mut g, &parents_of, output, wrt)?
        } else {
            let mut r = Raw { tape: self };
            let arrays = sweep(&mut r, &parents_of, output, wrt)?;
            arrays.into_iter().map(|a| a.map(|a| self.constant(a))).collect()
        };

        let mut out = Vec::with_capacity(wrt.len());
        for (w, f) in wrt.iter().zip(found) {
            match f {
                Some(v) => out.push(v),
                None => {
                    self.warn(format!(
                        "node {} is unreachable from the differentiated output; gradient set to zero",
                        w.idx
                    ));
                    let zeros = Array::zeros(self.shape(*w));
                    out.push(self.constant(zeros));
                }
            }
        }
        Ok(out)
    }

    /// Like [`Tape::grad`] without recording: returns plain arrays.
    pub fn grad_arrays(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Array<S>>> {
        let vars = self.grad(output, wrt, false)?;
        Ok(vars.into_iter().map(|v| self.value(v).clone()).collect())
    }
}
