//! Adam with bias correction and L2-coupled weight decay.
//!
//! ```text
//! g   <- g + wd * theta
//! m   <- b1 * m + (1 - b1) * g
//! v   <- b2 * v + (1 - b2) * g^2
//! theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::{ParamId, Params};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, weight_decay: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }
}

/// Optimizer state for one group of parameters.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    step: u64,
    ids: Vec<ParamId>,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, params: &Params<S>, ids: Vec<ParamId>) -> Self {
        let m = ids.iter().map(|&id| vec![S::zero(); params.get(id).len()]).collect::<Vec<_>>();
        let v = m.clone();
        Self { config, step: 0, ids, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// Applies one update; `grads[i]` belongs to `self.ids()[i]`.
    pub fn step(&mut self, params: &mut Params<S>, grads: &[Array<S>]) -> Result<()> {
        if grads.len() != self.ids.len() {
            return Err(Error::shape(format!(
                "adam expects {} gradients, got {}",
                self.ids.len(),
                grads.len()
            )));
        }
        for (&id, g) in self.ids.iter().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape(format!(
                    "gradient of `{}` has shape {:?}, expected {:?}",
                    params.name(id),
                    g.shape(),
                    params.get(id).shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Numerical { op: format!("adam_step ({})", params.name(id)) });
            }
        }

        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (lr, wd, eps) = (S::lit(c.learning_rate), S::lit(c.weight_decay), S::lit(c.eps));
        let t = self.step as i32;
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);

        for (slot, (&id, g)) in self.ids.iter().zip(grads).enumerate() {
            let theta = params.get(id);
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let updated: Vec<S> = theta
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(j, (&th, &gj))| {
                    let gj = gj + wd * th;
                    m[j] = b1 * m[j] + (S::one() - b1) * gj;
                    v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    th - lr * m_hat / (v_hat.sqrt() + eps)
                })
                .collect();
            params.set(id, Array::new(theta.shape().to_vec(), updated)?)?;
        }
        Ok(())
    }
}
