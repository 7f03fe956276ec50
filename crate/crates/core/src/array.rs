//! Immutable dense arrays in row-major order.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array. The buffer is shared and never mutated once built,
/// so clones are cheap.
#[derive(Clone, PartialEq)]
pub struct Array<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Scalar> Array<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data: Arc::new(data) })
    }

    /// Internal constructor for buffers whose length is known to match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data: Arc::new(data) }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::lit(v)).collect())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Self::from_parts(vec![], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data.as_ref().clone()
    }

    /// Consumes the array, avoiding a copy when the buffer is not shared.
    pub fn into_vec(self) -> Vec<S> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| shared.as_ref().clone())
    }

    /// Value of a single-element array.
    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on array of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> S {
        assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &d)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < d, "index {ix} out of bounds for axis {i} of size {d}");
            flat = flat * d + ix;
        }
        self.data[flat]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {:?}", self.shape, shape)));
        }
        Ok(Self { shape, data: Arc::clone(&self.data) })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Splits shape into `(outer, channels, inner)` around axis 1.
    pub(crate) fn channel_layout(&self) -> Result<(usize, usize, usize)> {
        channel_layout(&self.shape)
    }
}

pub(crate) fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!("channel op needs at least 2 dims, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<S: fmt::Debug> fmt::Debug for Array<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Array{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}
