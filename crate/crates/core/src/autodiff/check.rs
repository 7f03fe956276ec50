//! Central finite-difference gradient check.

use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::{Tape, Var};

/// Central finite-difference gradient of a scalar function of `x`.
pub fn central_difference<S: Scalar>(
    f: impl Fn(&Array<S>) -> Result<S>,
    x: &Array<S>,
    h: S,
) -> Result<Array<S>> {
    let mut data = x.to_vec();
    let mut out = Vec::with_capacity(data.len());
    let two_h = h + h;
    for i in 0..data.len() {
        let orig = data[i];
        data[i] = orig + h;
        let plus = f(&Array::from_parts(x.shape().to_vec(), data.clone()))?;
        data[i] = orig - h;
        let minus = f(&Array::from_parts(x.shape().to_vec(), data.clone()))?;
        data[i] = orig;
        out.push((plus - minus) / two_h);
    }
    Ok(Array::from_parts(x.shape().to_vec(), out))
}

/// Compares the recorded gradient of `f` at `x` with central differences.
///
/// `f` builds a scalar node from its input node on a fresh tape. Returns
/// `max_i |analytic_i - fd_i| / max(1, |fd_i|)`.
pub fn finite_diff_check<S: Scalar>(
    f: impl Fn(&mut Tape<S>, Var) -> Result<Var>,
    x: &Array<S>,
    h: S,
) -> Result<f64> {
    if !(h > S::zero() && h <= S::lit(1e-2)) {
        return Err(Error::Config(format!("finite-difference step must lie in (0, 1e-2], got {h}")));
    }
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let out = f(&mut tape, xv)?;
    let analytic = tape.grad_arrays(out, &[xv])?.remove(0);

    let eval = |p: &Array<S>| -> Result<S> {
        let mut t = Tape::new();
        let v = t.variable(p.clone());
        let o = f(&mut t, v)?;
        Ok(t.value(o).item())
    };
    let fd = central_difference(eval, x, h)?;
    Ok(max_relative_error(&analytic, &fd))
}

/// `max_i |a_i - b_i| / max(1, |b_i|)`.
pub fn max_relative_error<S: Scalar>(analytic: &Array<S>, reference: &Array<S>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &r)| {
            let (a, r) = (a.as_f64(), r.as_f64());
            (a - r).abs() / r.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}
