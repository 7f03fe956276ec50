use rand::Rng;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::{init_uniform, Bound, ParamId, Params};

/// Negative slope of every leaky rectifier in the networks.
pub const LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu<S: Scalar>(tape: &mut Tape<S>, x: Var) -> Result<Var> {
    tape.leaky_relu(x, S::lit(LEAKY_SLOPE))
}

/// 1-d convolution over time with bias. Odd kernel, stride 1, zero padding
/// `(k - 1) / 2`, so the time length is preserved.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
}

impl Conv1d {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel_size % 2 == 1, "kernel size must be odd");
        let weight = params.add(
            format!("{name}.weight"),
            init_uniform(&[out_channels, in_channels, kernel_size], in_channels * kernel_size, rng),
        );
        let bias = params.add(format!("{name}.bias"), Array::zeros(&[out_channels]));
        Self { weight, bias, in_channels, out_channels, kernel_size }
    }

    /// `x: (B, in, T) -> (B, out, T)`.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 3 || shape[1] != self.in_channels {
            return Err(Error::shape(format!(
                "conv layer expects (B, {}, T), got {:?}",
                self.in_channels, shape
            )));
        }
        let y = tape.conv1d(x, p[self.weight])?;
        tape.add_bias(y, p[self.bias])
    }
}

/// Affine map on the last axis: `(B, in) -> (B, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            init_uniform(&[out_features, in_features], in_features, rng),
        );
        let bias = params.add(format!("{name}.bias"), Array::zeros(&[out_features]));
        Self { weight, bias, in_features, out_features }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.in_features {
            return Err(Error::shape(format!(
                "linear layer expects (B, {}), got {:?}",
                self.in_features, shape
            )));
        }
        let y = tape.matmul(x, p[self.weight], false, true)?;
        tape.add_bias(y, p[self.bias])
    }

    /// Same map applied independently at every time step of `(B, in, T)`.
    pub fn forward_per_step<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 3 || shape[1] != self.in_features {
            return Err(Error::shape(format!(
                "per-step linear layer expects (B, {}, T), got {:?}",
                self.in_features, shape
            )));
        }
        let w = tape.reshape(p[self.weight], &[self.out_features, self.in_features, 1])?;
        let y = tape.conv1d(x, w)?;
        tape.add_bias(y, p[self.bias])
    }
}

/// Convolutional LSTM cell over a time axis. The four gates come from one
/// convolution over `[input; h]` with `4 * hidden` output channels, ordered
/// input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    pub gates: Conv1d,
    pub input_channels: usize,
    pub hidden_channels: usize,
}

impl ConvLstmCell {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        input_channels: usize,
        hidden_channels: usize,
        kernel_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let gates = Conv1d::new(
            params,
            &format!("{name}.gates"),
            input_channels + hidden_channels,
            4 * hidden_channels,
            kernel_size,
            rng,
        );
        Self { gates, input_channels, hidden_channels }
    }

    /// Zero `(h, c)` of shape `(batch, hidden, time)`.
    pub fn zero_state<S: Scalar>(&self, tape: &mut Tape<S>, batch: usize, time: usize) -> (Var, Var) {
        let shape = [batch, self.hidden_channels, time];
        (tape.constant(Array::zeros(&shape)), tape.constant(Array::zeros(&shape)))
    }

    /// One step: returns `(h', c')`.
    pub fn step<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        input: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        if tape.shape(h) != tape.shape(c) {
            return Err(Error::shape(format!(
                "lstm state shapes differ: {:?} vs {:?}",
                tape.shape(h),
                tape.shape(c)
            )));
        }
        let hc = self.hidden_channels;
        let z = tape.concat(&[input, h])?;
        let gates = self.gates.forward(tape, p, z)?;
        let i = tape.narrow(gates, 0, hc)?;
        let i = tape.sigmoid(i)?;
        let f = tape.narrow(gates, hc, hc)?;
        let f = tape.sigmoid(f)?;
        let o = tape.narrow(gates, 2 * hc, hc)?;
        let o = tape.sigmoid(o)?;
        let g = tape.narrow(gates, 3 * hc, hc)?;
        let g = tape.tanh(g)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_next = tape.add(keep, write)?;
        let squashed = tape.tanh(c_next)?;
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}
