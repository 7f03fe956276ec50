//! The learned prior Φ and the fully connected baseline.
//!
//! Both networks map a state `(B, C, T)` (or `(B, C)` for the per-hour FC
//! model) to a tensor of the same shape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Bound, Conv1d, Linear, Params};
use crate::scalar::Scalar;

/// Layer widths of an auto-encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeWidths {
    pub hidden: usize,
    pub latent: usize,
}

impl Default for AeWidths {
    fn default() -> Self {
        Self { hidden: 128, latent: 20 }
    }
}

/// Convolutional auto-encoder over the time axis.
///
/// `conv(C->H) -> leaky -> conv(H->Z)` then `conv(Z->H) -> leaky -> conv(H->C) -> leaky`.
#[derive(Clone, Debug)]
pub struct ConvAe {
    pub channels: usize,
    enc1: Conv1d,
    enc2: Conv1d,
    dec1: Conv1d,
    dec2: Conv1d,
}

impl ConvAe {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        prefix: &str,
        channels: usize,
        widths: AeWidths,
        rng: &mut impl Rng,
    ) -> Self {
        let AeWidths { hidden, latent } = widths;
        Self {
            channels,
            enc1: Conv1d::new(params, &format!("{prefix}.enc1"), channels, hidden, 3, rng),
            enc2: Conv1d::new(params, &format!("{prefix}.enc2"), hidden, latent, 3, rng),
            dec1: Conv1d::new(params, &format!("{prefix}.dec1"), latent, hidden, 3, rng),
            dec2: Conv1d::new(params, &format!("{prefix}.dec2"), hidden, channels, 3, rng),
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.enc2.out_channels
    }

    pub fn encode<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let z = self.enc1.forward(tape, p, x)?;
        let z = leaky_relu(tape, z)?;
        self.enc2.forward(tape, p, z)
    }

    pub fn decode<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, z: Var) -> Result<Var> {
        let x = self.dec1.forward(tape, p, z)?;
        let x = leaky_relu(tape, x)?;
        let x = self.dec2.forward(tape, p, x)?;
        leaky_relu(tape, x)
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let z = self.encode(tape, p, x)?;
        self.decode(tape, p, z)
    }
}

/// Fully connected auto-encoder with the rectifier after every layer.
#[derive(Clone, Debug)]
pub struct FcAe {
    pub channels: usize,
    layers: [Linear; 4],
}

impl FcAe {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        prefix: &str,
        channels: usize,
        widths: AeWidths,
        rng: &mut impl Rng,
    ) -> Self {
        let AeWidths { hidden, latent } = widths;
        let dims = [(channels, hidden), (hidden, latent), (latent, hidden), (hidden, channels)];
        let names = ["enc1", "enc2", "dec1", "dec2"];
        let layers = std::array::from_fn(|i| {
            Linear::new(params, &format!("{prefix}.{}", names[i]), dims[i].0, dims[i].1, rng)
        });
        Self { channels, layers }
    }

    /// `(B, C) -> (B, C)`.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, p, h)?;
            h = leaky_relu(tape, h)?;
        }
        Ok(h)
    }

    /// The same map at every time step of `(B, C, T)`; time acts as batch.
    pub fn forward_per_step<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward_per_step(tape, p, h)?;
            h = leaky_relu(tape, h)?;
        }
        Ok(h)
    }
}

/// Either auto-encoder applied to a `(B, C, T)` state.
#[derive(Clone, Debug)]
pub enum Prior {
    Conv(ConvAe),
    Fc(FcAe),
    /// `Φ(x) = x`; a reference prior with no parameters.
    Identity { channels: usize },
}

impl Prior {
    pub fn channels(&self) -> usize {
        match self {
            Prior::Conv(m) => m.channels,
            Prior::Fc(m) => m.channels,
            Prior::Identity { channels } => *channels,
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 3 || shape[1] != self.channels() {
            return Err(Error::shape(format!(
                "prior expects (B, {}, T), got {:?}",
                self.channels(),
                shape
            )));
        }
        match self {
            Prior::Conv(m) => m.forward(tape, p, x),
            Prior::Fc(m) => m.forward_per_step(tape, p, x),
            Prior::Identity { .. } => Ok(x),
        }
    }
}
