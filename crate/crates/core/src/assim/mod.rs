//! The variational cost and the learned iterative solver that minimises it.
//!
//! States are `(B, C, T)` arrays whose last channel is the in-situ wind; the
//! remaining channels are the observable modalities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, ConvLstmCell, Linear, ParamId, Params};
use crate::priors::{AeWidths, ConvAe, Prior};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// `x <- L(h)`
    #[default]
    Replace,
    /// `x <- x + L(h)`
    Additive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssimConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_d: f64,
    pub lambda_p: f64,
    pub n_iter: usize,
    pub detach_inner_grad: bool,
    pub update_mode: UpdateMode,
    /// Rescale each channel of the cost gradient to unit RMS before the LSTM.
    pub normalize_grad: bool,
}

impl Default for AssimConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 1.5,
            lambda_d: 0.5,
            lambda_p: 1.5,
            n_iter: 5,
            detach_inner_grad: false,
            update_mode: UpdateMode::Replace,
            normalize_grad: false,
        }
    }
}

impl AssimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_d", self.lambda_d),
            ("lambda_p", self.lambda_p),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Observations `y` and their mask. Unobserved entries of `y` are always 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Obs<S> {
    y: Array<S>,
    mask: Array<S>,
}

impl<S: Scalar> Obs<S> {
    /// Zeroes `y` wherever `mask` is 0. Mask entries must be 0 or 1.
    pub fn new(y: Array<S>, mask: Array<S>) -> Result<Self> {
        if y.shape() != mask.shape() {
            return Err(Error::shape(format!(
                "observation {:?} and mask {:?} differ",
                y.shape(),
                mask.shape()
            )));
        }
        if mask.data().iter().any(|&m| m != S::zero() && m != S::one()) {
            return Err(Error::Mask("observation mask must be binary".into()));
        }
        let y = y.zip_map(&mask, |v, m| if m == S::one() { v } else { S::zero() })?;
        Ok(Self { y, mask })
    }

    pub fn y(&self) -> &Array<S> {
        &self.y
    }

    pub fn mask(&self) -> &Array<S> {
        &self.mask
    }

    pub fn shape(&self) -> &[usize] {
        self.y.shape()
    }
}

/// Observation operator: keeps every channel but the last (wind), whose
/// mask is cleared. `available` marks entries that exist in the data and is
/// intersected with the operator's mask.
pub fn observe<S: Scalar>(x: &Array<S>, available: Option<&Array<S>>) -> Result<Obs<S>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[1] < 2 {
        return Err(Error::shape(format!("state must be (B, C>=2, T), got {shape:?}")));
    }
    let (c, t) = (shape[1], shape[2]);
    let mut mask = Array::from_fn(shape, |i| if (i / t) % c == c - 1 { S::zero() } else { S::one() });
    if let Some(a) = available {
        mask = mask.zip_map(a, |m, a| if a == S::zero() { S::zero() } else { m })?;
    }
    Obs::new(x.clone(), mask)
}

/// `λ1 ‖x − y‖²_Ω + λ2 ‖x − Φ(x)‖²` with plain sums over every axis.
pub fn variational_cost<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    obs: &Obs<S>,
    prior: &Prior,
    p: &Bound,
    cfg: &AssimConfig,
) -> Result<Var> {
    if tape.shape(x) != obs.shape() {
        return Err(Error::shape(format!(
            "state {:?} does not match observations {:?}",
            tape.shape(x),
            obs.shape()
        )));
    }
    let y = tape.constant(obs.y.clone());
    let d = tape.sub(x, y)?;
    let data = tape.masked_sq_norm(d, obs.mask.clone())?;
    let phi = prior.forward(tape, p, x)?;
    let r = tape.sub(x, phi)?;
    let reg = tape.sq_norm(r)?;
    let data = tape.scale(data, S::lit(cfg.lambda1))?;
    let reg = tape.scale(reg, S::lit(cfg.lambda2))?;
    tape.add(data, reg)
}

/// Hyper-parameters that fix the solver's parameter shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverWidths {
    pub prior: AeWidths,
    pub lstm_hidden: usize,
    pub lstm_kernel: usize,
}

impl Default for SolverWidths {
    fn default() -> Self {
        Self { prior: AeWidths::default(), lstm_hidden: 100, lstm_kernel: 3 }
    }
}

/// Parameter name prefixes: the prior Φ under `phi.`, the solver Γ under
/// `gamma.` and the head L under `head.`.
pub const PRIOR_PREFIX: &str = "phi";

/// Prior Φ, recurrent solver Γ and linear head L.
#[derive(Clone, Debug)]
pub struct VarNet {
    pub prior: Prior,
    pub lstm: ConvLstmCell,
    pub head: Linear,
    pub channels: usize,
}

/// Recurrent state carried between solver iterations.
#[derive(Clone, Copy, Debug)]
pub struct SolverState {
    pub x: Var,
    pub h: Var,
    pub c: Var,
}

impl VarNet {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        channels: usize,
        widths: SolverWidths,
        rng: &mut impl Rng,
    ) -> Self {
        let prior = Prior::Conv(ConvAe::new(params, PRIOR_PREFIX, channels, widths.prior, rng));
        let lstm =
            ConvLstmCell::new(params, "gamma", channels, widths.lstm_hidden, widths.lstm_kernel, rng);
        let head = Linear::new(params, "head", widths.lstm_hidden, channels, rng);
        Self { prior, lstm, head, channels }
    }

    /// Ids of Φ and of Γ + L, for the two optimizers.
    pub fn param_groups<S: Scalar>(params: &Params<S>) -> (Vec<ParamId>, Vec<ParamId>) {
        params.ids().partition(|&id| params.name(id).starts_with("phi."))
    }

    /// `x⁰`: masked observations, wind channel zero.
    pub fn initial_state<S: Scalar>(obs: &Obs<S>) -> Array<S> {
        obs.y.clone()
    }

    pub fn init<S: Scalar>(&self, tape: &mut Tape<S>, obs: &Obs<S>) -> Result<SolverState> {
        let shape = obs.shape();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(Error::shape(format!(
                "solver expects (B, {}, T), got {:?}",
                self.channels, shape
            )));
        }
        let x = tape.variable(Self::initial_state(obs));
        let (h, c) = self.lstm.zero_state(tape, shape[0], shape[2]);
        Ok(SolverState { x, h, c })
    }

    /// One iteration: `g = ∇ₓU`, `(h, c) = Γ(g, h, c)`, `x = L(h)` or `x + L(h)`.
    pub fn step<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        state: SolverState,
        obs: &Obs<S>,
        cfg: &AssimConfig,
    ) -> Result<SolverState> {
        self.step_inner(tape, p, state, obs, cfg, !cfg.detach_inner_grad)
    }

    fn step_inner<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        state: SolverState,
        obs: &Obs<S>,
        cfg: &AssimConfig,
        create_graph: bool,
    ) -> Result<SolverState> {
        // With frozen parameters the iterate is a constant; U still needs a
        // gradient with respect to it.
        let x = if tape.requires_grad(state.x) {
            state.x
        } else {
            let v = tape.value(state.x).clone();
            tape.variable(v)
        };
        let u = variational_cost(tape, x, obs, &self.prior, p, cfg)?;
        let mut g = tape.grad(u, &[x], create_graph)?.remove(0);
        if !create_graph {
            g = tape.detach(g);
        }
        if cfg.normalize_grad {
            g = channel_rms_normalize(tape, g)?;
        }
        let (h, c) = self.lstm.step(tape, p, g, state.h, state.c)?;
        let dx = self.head.forward_per_step(tape, p, h)?;
        let x = match cfg.update_mode {
            UpdateMode::Replace => dx,
            UpdateMode::Additive => tape.add(x, dx)?,
        };
        Ok(SolverState { x, h, c })
    }

    /// Ψ_Θ(y): `cfg.n_iter` solver iterations from `x⁰`.
    pub fn reconstruct<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        obs: &Obs<S>,
        cfg: &AssimConfig,
    ) -> Result<Var> {
        if cfg.n_iter == 0 {
            return Err(Error::Config("n_iter must be at least 1".into()));
        }
        let mut state = self.init(tape, obs)?;
        for _ in 0..cfg.n_iter {
            state = self.step(tape, p, state, obs, cfg)?;
        }
        Ok(state.x)
    }

    /// Forward-only reconstruction with fixed parameters. Values equal those
    /// of [`VarNet::reconstruct`]; no second-order graph is recorded.
    pub fn predict<S: Scalar>(&self, params: &Params<S>, obs: &Obs<S>, cfg: &AssimConfig) -> Result<Array<S>> {
        if cfg.n_iter == 0 {
            return Err(Error::Config("n_iter must be at least 1".into()));
        }
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let mut state = self.init(&mut tape, obs)?;
        for _ in 0..cfg.n_iter {
            state = self.step_inner(&mut tape, &p, state, obs, cfg, false)?;
        }
        Ok(tape.value(state.x).clone())
    }
}

fn channel_rms_normalize<S: Scalar>(tape: &mut Tape<S>, g: Var) -> Result<Var> {
    let shape = tape.shape(g).to_vec();
    let per_channel: usize = shape.iter().product::<usize>() / shape[1];
    let sq = tape.mul(g, g)?;
    let ms = tape.channel_sum(sq)?;
    let ms = tape.affine(ms, S::one() / S::from_usize(per_channel).unwrap(), S::lit(1e-12))?;
    let inv = tape.powf(ms, S::lit(-0.5))?;
    let inv = tape.broadcast_channel(inv, &shape)?;
    tape.mul(g, inv)
}
