//! Experiment configuration and the end-to-end pipeline from a dataset to
//! scored multi-seed runs.

mod runs;

pub use runs::{
    checkpoint_path, read_config, run_eval, run_report, run_train, EvalOutputs, RunManifest, OUTPUT_ROOT_ENV,
};

use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assim::AssimConfig;
use crate::data::{
    colocate, make_windows, read_csv_path, sample_train_windows, synth_generate, HourlyRecord, MaskSpec,
    MissingMask, Modality, Normalizer, Series, SeriesBatch, Splits, SynthConfig, DEFAULT_TEST_HOURS,
    DEFAULT_VAL_HOURS, WINDOW_LEN,
};
use crate::error::{Error, Result};
use crate::eval::{deoverlap, hourly_error_profile, n_median_aggregate, EvalReport, ScatterRow, DEFAULT_BASELINE_PB};
use crate::scalar::Scalar;
use crate::train::{train_protocol, Model, ModelKind, ModelWidths, ProtocolResult, TrainConfig, TrainData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Hourly CSV. When absent a synthetic record of `synth_hours` is used.
    pub dataset: Option<PathBuf>,
    pub synth_hours: usize,
    pub synth_seed: u64,
    pub test_hours: usize,
    pub val_hours: usize,
    /// Fraction of UPA hours removed from every window, at train and test time.
    pub missing_frac: f64,
    pub mask_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            synth_hours: 20_000,
            synth_seed: 0,
            test_hours: DEFAULT_TEST_HOURS,
            val_hours: DEFAULT_VAL_HOURS,
            missing_frac: 0.0,
            mask_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub baseline_pb: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { baseline_pb: DEFAULT_BASELINE_PB }
    }
}

/// Every hyper-parameter of an experiment. Serialized as TOML.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelWidths,
    pub assim: AssimConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the resolved TOML, in hex.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.assim.validate()?;
        self.train.validate()?;
        self.mask_spec(0).validate()?;
        if !(self.eval.baseline_pb > 0.0) {
            return Err(Error::Config("baseline_pb must be positive".into()));
        }
        Ok(())
    }

    /// Solver settings at test time: the phase 2 iteration count for the
    /// solver models.
    pub fn eval_assim(&self, kind: ModelKind) -> AssimConfig {
        if kind.is_varnet() {
            AssimConfig { n_iter: self.train.phase2_iters, ..self.assim }
        } else {
            self.assim
        }
    }

    fn mask_spec(&self, seed: u64) -> MaskSpec {
        MaskSpec { missing_frac: self.data.missing_frac, seed }
    }

    /// Loads the dataset named in the config, or generates the synthetic one.
    pub fn load_records(&self) -> Result<Vec<HourlyRecord>> {
        let raw = match &self.data.dataset {
            Some(path) => read_csv_path(path)?,
            None => synth_generate(self.data.synth_hours, self.data.synth_seed, &self.synth)?,
        };
        colocate(&raw)
    }
}

/// Independent seed for a named stream of a base seed.
fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

const TEST_MASK_STREAM: u64 = 0;

fn train_mask_stream(seed: u64) -> u64 {
    (seed << 2) | 1
}

fn val_mask_stream(seed: u64) -> u64 {
    (seed << 2) | 2
}

/// A colocated series of one modality split into test, validation and
/// training regions, with the normalizer fitted on the training region.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub splits: Splits,
    pub normalizer: Normalizer,
}

impl Dataset {
    pub fn new(records: &[HourlyRecord], modality: Modality, data: &DataConfig) -> Result<Self> {
        let series = Series::from_records(records, modality)?;
        let splits = series.split(data.test_hours, data.val_hours)?;
        let normalizer = Normalizer::fit(&splits.train)?;
        Ok(Self { splits, normalizer })
    }

    pub fn with_normalizer(records: &[HourlyRecord], modality: Modality, data: &DataConfig, normalizer: Normalizer) -> Result<Self> {
        let series = Series::from_records(records, modality)?;
        let splits = series.split(data.test_hours, data.val_hours)?;
        if normalizer.channels() != series.channels() {
            return Err(Error::Checkpoint("stored normalizer does not match the dataset modality".into()));
        }
        Ok(Self { splits, normalizer })
    }

    /// Training and validation windows of one seed, with its missing-data masks.
    pub fn train_data<S: Scalar>(&self, kind: ModelKind, cfg: &Config, seed: u64) -> Result<TrainData<S>> {
        let (train, val) = (&self.splits.train, &self.splits.val);
        let windows = sample_train_windows(train, cfg.train.train_windows, WINDOW_LEN, seed)?;
        let (train_starts, val_starts, len) = if kind.per_hour() {
            let hours: Vec<usize> = windows.iter().flat_map(|&s| s..s + WINDOW_LEN).collect();
            (hours, make_windows(val, 1, cfg.train.val_stride), 1)
        } else {
            (windows, make_windows(val, WINDOW_LEN, cfg.train.val_stride), WINDOW_LEN)
        };
        if val_starts.is_empty() {
            return Err(Error::Ingest("validation region holds no complete window".into()));
        }
        let mask = |starts: &[usize], stream: u64| {
            MissingMask::draw(&cfg.mask_spec(derive_seed(cfg.data.mask_seed, stream)), starts.len(), len)
        };
        let train_batch = train.gather(&train_starts, len, &self.normalizer)?;
        let val_batch = val.gather(&val_starts, len, &self.normalizer)?;
        Ok(TrainData {
            train: mask(&train_starts, train_mask_stream(seed))?.apply(&train_batch)?,
            val: mask(&val_starts, val_mask_stream(seed))?.apply(&val_batch)?,
        })
    }

    /// All 24 h test windows at stride 1 with the test mask, which does not
    /// depend on the training seed.
    pub fn test_batch<S: Scalar>(&self, cfg: &Config) -> Result<SeriesBatch<S>> {
        let test = &self.splits.test;
        let starts = make_windows(test, WINDOW_LEN, 1);
        if starts.is_empty() {
            return Err(Error::Ingest("test region holds no complete window".into()));
        }
        let batch = test.gather(&starts, WINDOW_LEN, &self.normalizer)?;
        let spec = cfg.mask_spec(derive_seed(cfg.data.mask_seed, TEST_MASK_STREAM));
        MissingMask::draw(&spec, starts.len(), WINDOW_LEN)?.apply(&batch)
    }
}

/// Denormalized wind reconstruction of every window in `batch`.
pub fn predict_windows<S: Scalar>(
    model: &Model<S>,
    batch: &SeriesBatch<S>,
    normalizer: &Normalizer,
    assim: &AssimConfig,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let (c, t) = (batch.channels(), batch.window_len());
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut out = Vec::with_capacity(batch.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let xhat = model.predict(&batch.select(chunk).obs()?, assim)?;
        for n in 0..chunk.len() {
            let base = (n * c + c - 1) * t;
            out.push(xhat.data()[base..base + t].iter().map(|z| normalizer.denormalize_wind(z.as_f64())).collect());
        }
    }
    Ok(out)
}

/// Test-set predictions of one trained run.
pub fn test_predictions<S: Scalar>(model: &Model<S>, dataset: &Dataset, cfg: &Config) -> Result<Vec<Vec<f64>>> {
    let batch = dataset.test_batch::<S>(cfg)?;
    predict_windows(model, &batch, &dataset.normalizer, &cfg.eval_assim(model.kind), cfg.train.batch_size)
}

/// Scores the test-window predictions of several runs of one model.
/// `runs[i]` holds the window predictions of `seeds[i]`.
pub fn score_runs(
    dataset: &Dataset,
    cfg: &Config,
    kind: ModelKind,
    config_hash: &str,
    seeds: &[u64],
    runs: &[Vec<Vec<f64>>],
) -> Result<(EvalReport, Vec<ScatterRow>)> {
    let test = &dataset.splits.test;
    let starts = make_windows(test, WINDOW_LEN, 1);
    let hourly = runs
        .iter()
        .map(|w| deoverlap(w, &starts, test.len()))
        .collect::<Result<Vec<_>>>()?;
    let hours: Vec<usize> = (0..test.len()).filter(|&h| hourly[0][h].is_some()).collect();
    let truth: Vec<f64> = hours.iter().map(|&h| test.wind(h)).collect();
    let per_run: Vec<Vec<f64>> = hourly.iter().map(|r| hours.iter().map(|&h| r[h].unwrap_or(f64::NAN)).collect()).collect();

    // Profile of the aggregated window predictions.
    let n_windows = starts.len();
    let agg_windows: Vec<Vec<f64>> = (0..n_windows)
        .map(|i| n_median_aggregate(&runs.iter().map(|r| r[i].clone()).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let truth_windows: Vec<Vec<f64>> = starts.iter().map(|&s| (s..s + WINDOW_LEN).map(|h| test.wind(h)).collect()).collect();
    let profile = hourly_error_profile(&agg_windows, &truth_windows)?;

    let report = EvalReport::from_runs(
        kind.name(),
        cfg.data.missing_frac,
        config_hash,
        seeds,
        &per_run,
        &truth,
        profile,
        cfg.eval.baseline_pb,
    )?;
    let aggregated = n_median_aggregate(&per_run)?;
    let scatter = hours
        .iter()
        .zip(truth.iter().zip(&aggregated))
        .map(|(&h, (&t, &p))| ScatterRow {
            timestamp: test.timestamps()[h].format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            truth: t,
            prediction: p,
            ecmwf: test.ecmwf(h),
        })
        .collect();
    Ok((report, scatter))
}

/// Outcome of training and scoring one model over several seeds in memory.
#[derive(Clone, Debug)]
pub struct Benchmark<S> {
    pub report: EvalReport,
    pub scatter: Vec<ScatterRow>,
    pub runs: Vec<ProtocolResult<S>>,
}

/// Trains `kind` for each of `cfg.train.seeds` (in parallel) and scores the
/// runs on the test set.
pub fn benchmark<S: Scalar>(records: &[HourlyRecord], kind: ModelKind, cfg: &Config) -> Result<Benchmark<S>> {
    cfg.validate()?;
    let dataset = Dataset::new(records, kind.modality(), &cfg.data)?;
    let seeds = cfg.train.seeds.clone();
    let trained = seeds
        .par_iter()
        .map(|&seed| {
            let data = dataset.train_data::<S>(kind, cfg, seed)?;
            let res = train_protocol(kind, &cfg.model, &data, &cfg.train, &cfg.assim, seed)?;
            let preds = test_predictions(&res.model, &dataset, cfg)?;
            Ok((res, preds))
        })
        .collect::<Result<Vec<_>>>()?;
    let (runs, preds): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    let (report, scatter) = score_runs(&dataset, cfg, kind, &cfg.hash()?, &seeds, &preds)?;
    Ok(Benchmark { report, scatter, runs })
}
