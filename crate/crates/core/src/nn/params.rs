use std::ops::Index;

use rand::Rng;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a parameter inside a [`Params`] store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Ordered, named collection of trainable arrays.
///
/// Layers keep [`ParamId`]s into the store; a forward pass first binds the
/// store onto a tape and then looks nodes up by id.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Params<S> {
    names: Vec<String>,
    values: Vec<Array<S>>,
}

impl<S: Scalar> Params<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    /// # Panics
    /// On a duplicate name; parameter paths are fixed by the architecture.
    pub fn add(&mut self, name: impl Into<String>, value: Array<S>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter `{name}`");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array<S> {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Array<S>) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                self.names[id.0],
                cur.shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids whose path starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids().filter(|id| self.names[id.0].starts_with(prefix)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<S>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        Bound { vars: self.values.iter().map(|v| tape.variable(v.clone())).collect() }
    }

    /// Records every parameter as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Bound {
        Bound { vars: self.values.iter().map(|v| tape.constant(v.clone())).collect() }
    }

    /// Copies values from `other` for every name both stores share with equal shapes.
    pub fn load_matching(&mut self, other: &Params<S>) -> Result<usize> {
        let mut n = 0;
        for (name, value) in other.iter() {
            if let Some(id) = self.id_of(name) {
                self.set(id, value.clone())?;
                n += 1;
            }
        }
        Ok(n)
    }
}

/// Tape nodes of a bound [`Params`] store.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self, ids: &[ParamId]) -> Vec<Var> {
        ids.iter().map(|id| self.vars[id.0]).collect()
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Array<S> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array::from_fn(shape, |_| S::lit(rng.gen_range(-bound..=bound)))
}

/// Max relative error between the tape gradient of `f` with respect to
/// parameter `id` and central finite differences. Every other parameter is
/// held constant.
pub fn param_grad_check<S: Scalar>(
    params: &Params<S>,
    id: ParamId,
    f: impl Fn(&mut Tape<S>, &Bound) -> Result<Var>,
    h: S,
) -> Result<f64> {
    crate::autodiff::finite_diff_check(
        |tape, v| {
            let mut bound = params.bind_frozen(tape);
            bound.vars[id.0] = v;
            f(tape, &bound)
        },
        params.get(id),
        h,
    )
}
