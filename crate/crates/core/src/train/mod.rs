//! Training loss, single-phase training with validation-based selection and
//! the two-phase protocol.

mod model;

pub use model::{Model, ModelKind, ModelWidths};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::assim::{AssimConfig, Obs};
use crate::autodiff::{Tape, Var};
use crate::data::SeriesBatch;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Params};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Number of 24 h windows sampled from the training region.
    pub train_windows: usize,
    /// Step between validation window starts.
    pub val_stride: usize,
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub adam_phi: AdamConfig,
    pub adam_solver: AdamConfig,
    /// Weight decay of the fully connected baseline.
    pub fc_weight_decay: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            train_windows: 2000,
            val_stride: 1,
            phase1_iters: 5,
            phase2_iters: 10,
            adam_phi: AdamConfig::default(),
            adam_solver: AdamConfig::default(),
            fc_weight_decay: 1e-6,
            seeds: (0..10).collect(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.train_windows == 0 || self.val_stride == 0 {
            return Err(Error::Config("epochs, batch_size, train_windows and val_stride must be positive".into()));
        }
        if self.phase1_iters == 0 || self.phase2_iters < self.phase1_iters {
            return Err(Error::Config("need 1 <= phase1_iters <= phase2_iters".into()));
        }
        Ok(())
    }
}

/// Weighted targets of the training loss for one batch.
#[derive(Clone, Debug)]
pub struct LossTarget<S> {
    target: Array<S>,
    weight: Array<S>,
}

impl<S: Scalar> LossTarget<S> {
    /// `λ_d` mean square over Ω^α on the observable channels plus `λ_p`
    /// mean square over Ω^β on the wind channel. `wind` and `wind_mask`
    /// are `(B, 1, T)`.
    pub fn new(obs: &Obs<S>, wind: &Array<S>, wind_mask: &Array<S>, lambda_d: f64, lambda_p: f64) -> Result<Self> {
        let shape = obs.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::shape(format!("loss expects (B, C, T), got {shape:?}")));
        }
        let (b, c, t) = (shape[0], shape[1], shape[2]);
        if wind.shape() != [b, 1, t] || wind_mask.shape() != [b, 1, t] {
            return Err(Error::shape(format!(
                "wind target {:?} / mask {:?} must be [{b}, 1, {t}]",
                wind.shape(),
                wind_mask.shape()
            )));
        }
        let is_wind = |i: usize| (i / t) % c == c - 1;
        let wind_idx = |i: usize| (i / (c * t)) * t + i % t;
        let n_alpha: S = (0..b * c * t).filter(|&i| !is_wind(i)).map(|i| obs.mask().data()[i]).sum();
        let n_beta = wind_mask.sum();
        if lambda_d > 0.0 && n_alpha == S::zero() {
            return Err(Error::Mask("no observed entries in the data term mask".into()));
        }
        if lambda_p > 0.0 && n_beta == S::zero() {
            return Err(Error::Mask("no in-situ wind entries in the supervision mask".into()));
        }
        let wa = if lambda_d > 0.0 { S::lit(lambda_d) / n_alpha } else { S::zero() };
        let wb = if lambda_p > 0.0 { S::lit(lambda_p) / n_beta } else { S::zero() };
        let target = Array::from_fn(&shape, |i| {
            if is_wind(i) {
                if wind_mask.data()[wind_idx(i)] == S::zero() {
                    S::zero()
                } else {
                    wind.data()[wind_idx(i)]
                }
            } else {
                obs.y().data()[i]
            }
        });
        let weight = Array::from_fn(&shape, |i| {
            if is_wind(i) {
                wb * wind_mask.data()[wind_idx(i)]
            } else {
                wa * obs.mask().data()[i]
            }
        });
        Ok(Self { target, weight })
    }

    pub fn from_batch(batch: &SeriesBatch<S>, cfg: &AssimConfig) -> Result<Self> {
        let (wind, wind_mask) = batch.wind();
        Self::new(&batch.obs()?, &wind, &wind_mask, cfg.lambda_d, cfg.lambda_p)
    }

    /// Loss value for a fixed prediction.
    pub fn eval(&self, xhat: &Array<S>) -> Result<S> {
        let d = xhat.zip_map(&self.target, |a, b| a - b)?;
        crate::autodiff::kernels::masked_sq_norm(&d, &self.weight)
    }
}

/// The training loss on the tape.
pub fn training_loss<S: Scalar>(tape: &mut Tape<S>, xhat: Var, target: &LossTarget<S>) -> Result<Var> {
    let t = tape.constant(target.target.clone());
    let d = tape.sub(xhat, t)?;
    tape.masked_sq_norm(d, target.weight.clone())
}

/// Windows used by one training run, already normalized and masked.
#[derive(Clone, Debug)]
pub struct TrainData<S> {
    pub train: SeriesBatch<S>,
    pub val: SeriesBatch<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct PhaseResult<S> {
    pub phase: u32,
    pub n_iter: usize,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_params: Params<S>,
}

impl<S> PhaseResult<S> {
    pub fn best_val_loss(&self) -> f64 {
        self.curve[self.best_epoch - 1].val_loss
    }
}

fn optimizers<S: Scalar>(model: &Model<S>, cfg: &TrainConfig) -> Vec<AdamState<S>> {
    let groups = model.param_groups();
    let mut out = Vec::new();
    for (i, ids) in groups.into_iter().enumerate() {
        let c = match (i, model.kind.is_fc()) {
            (0, true) => cfg.adam_phi.with_weight_decay(cfg.fc_weight_decay),
            (0, false) => cfg.adam_phi,
            _ => cfg.adam_solver,
        };
        out.push(AdamState::new(c, &model.params, ids));
    }
    out
}

fn batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(|c| c.to_vec()).collect()
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numerical { op } => Error::Divergence { epoch, detail: format!("non-finite value in `{op}`") },
        other => other,
    }
}

/// Validation loss over a whole window set with fixed parameters, using
/// global masked means.
pub fn evaluate_loss<S: Scalar>(model: &Model<S>, data: &SeriesBatch<S>, cfg: &AssimConfig, batch_size: usize) -> Result<f64> {
    let (mut sa, mut na, mut sb, mut nb) = (0.0, 0.0, 0.0, 0.0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.select(chunk);
        let obs = batch.obs()?;
        let xhat = model.predict(&obs, cfg)?;
        let (wind, wmask) = batch.wind();
        let (c, t) = (batch.channels(), batch.window_len());
        for (i, (&x, (&y, &m))) in xhat.data().iter().zip(obs.y().data().iter().zip(obs.mask().data())).enumerate() {
            if (i / t) % c == c - 1 {
                let w = (i / (c * t)) * t + i % t;
                let m = wmask.data()[w].as_f64();
                let d = (x - wind.data()[w]).as_f64();
                sb += m * d * d;
                nb += m;
            } else {
                let m = m.as_f64();
                let d = (x - y).as_f64();
                sa += m * d * d;
                na += m;
            }
        }
    }
    let mut loss = 0.0;
    if na > 0.0 {
        loss += cfg.lambda_d * sa / na;
    }
    if nb > 0.0 {
        loss += cfg.lambda_p * sb / nb;
    }
    Ok(loss)
}

/// One training phase: `cfg.epochs` epochs of Adam, validation after each
/// epoch, returning the parameters with the lowest validation loss.
pub fn train_one_phase<S: Scalar>(
    model: &mut Model<S>,
    data: &TrainData<S>,
    train_cfg: &TrainConfig,
    assim: &AssimConfig,
    phase: u32,
    seed: u64,
) -> Result<PhaseResult<S>> {
    train_cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut opts = optimizers(model, train_cfg);
    let all_ids: Vec<_> = opts.iter().flat_map(|o| o.ids().to_vec()).collect();
    let start = Instant::now();
    let mut curve = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(usize, f64, Params<S>)> = None;

    for epoch in 1..=train_cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((phase as u64) << 32) | epoch as u64);
        let mut sum = 0.0;
        for idx in batches(data.train.len(), train_cfg.batch_size, &mut rng) {
            let batch = data.train.select(&idx);
            let target = LossTarget::from_batch(&batch, assim)?;
            let obs = batch.obs()?;
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape);
            let step = (|| {
                let xhat = model.forward(&mut tape, &p, &obs, assim)?;
                let loss = training_loss(&mut tape, xhat, &target)?;
                let grads = tape.grad_arrays(loss, &p.vars(&all_ids))?;
                Ok((tape.value(loss).item().as_f64(), grads))
            })();
            let (loss, grads) = step.map_err(|e| diverged(epoch, e))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, detail: format!("training loss {loss}") });
            }
            sum += loss * idx.len() as f64;
            let mut offset = 0;
            for opt in &mut opts {
                let n = opt.ids().len();
                opt.step(&mut model.params, &grads[offset..offset + n]).map_err(|e| diverged(epoch, e))?;
                offset += n;
            }
        }
        let train_loss = sum / data.train.len() as f64;
        let val_loss = evaluate_loss(model, &data.val, assim, train_cfg.batch_size).map_err(|e| diverged(epoch, e))?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("validation loss {val_loss}") });
        }
        let wall_seconds = start.elapsed().as_secs_f64();
        log::info!(
            "{} phase {phase} seed {seed} epoch {epoch}: train {train_loss:.5} val {val_loss:.5} ({wall_seconds:.1}s)",
            model.kind
        );
        curve.push(EpochRecord { epoch, train_loss, val_loss, wall_seconds });
        if best.as_ref().is_none_or(|b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.params.clone()));
        }
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    Ok(PhaseResult { phase, n_iter: assim.n_iter, curve, best_epoch, best_params })
}

#[derive(Clone, Debug)]
pub struct ProtocolResult<S> {
    pub phases: Vec<PhaseResult<S>>,
    /// Best parameters of the last phase.
    pub model: Model<S>,
}

/// Solver models: phase 1 with `phase1_iters`, then phase 2 with
/// `phase2_iters` from the best phase-1 parameters and fresh optimizers.
/// Other models train a single phase.
pub fn train_protocol<S: Scalar>(
    kind: ModelKind,
    widths: &ModelWidths,
    data: &TrainData<S>,
    train_cfg: &TrainConfig,
    assim: &AssimConfig,
    seed: u64,
) -> Result<ProtocolResult<S>> {
    assim.validate()?;
    let mut model = Model::new(kind, widths, seed);
    let schedule: Vec<usize> = if kind.is_varnet() {
        vec![train_cfg.phase1_iters, train_cfg.phase2_iters]
    } else {
        vec![assim.n_iter]
    };
    let mut phases = Vec::new();
    for (i, &n_iter) in schedule.iter().enumerate() {
        let cfg = AssimConfig { n_iter, ..*assim };
        let res = train_one_phase(&mut model, data, train_cfg, &cfg, i as u32 + 1, seed)?;
        model.params = res.best_params.clone();
        phases.push(res);
    }
    Ok(ProtocolResult { phases, model })
}
