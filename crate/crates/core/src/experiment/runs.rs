//! File-based commands that turn configs into checkpoints and checkpoints
//! into reports.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{score_runs, test_predictions, Config, Dataset};
use crate::error::{Error, Result};
use crate::eval::{ConsolidatedRow, EvalReport, ScatterRow};
use crate::nn::checkpoint::{self, CheckpointHeader};
use crate::scalar::Scalar;
use crate::train::{train_protocol, EpochRecord, Model, ModelKind};

/// Environment variable overriding the default output root `runs`.
pub const OUTPUT_ROOT_ENV: &str = "WINDASSIM_OUTPUT_ROOT";

/// Record of one `train` invocation, written as `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub model: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    /// Training time of each seed in seconds.
    pub wall_seconds: Vec<f64>,
}

pub fn read_config(path: &Path) -> Result<Config> {
    Config::from_toml(&fs::read_to_string(path)?)
}

/// Final checkpoint of one seed.
pub fn checkpoint_path(out_dir: &Path, kind: ModelKind, seed: u64) -> PathBuf {
    out_dir.join(kind.name()).join(format!("seed-{seed}.ckpt"))
}

fn phase_path(out_dir: &Path, kind: ModelKind, seed: u64, phase: u32, suffix: &str) -> PathBuf {
    out_dir.join(kind.name()).join(format!("seed-{seed}-phase{phase}{suffix}"))
}

fn write_curve(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in curve {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains `kind` for every seed and writes, under `out_dir/<model>/`, the
/// best checkpoint and loss curve of each phase plus the final checkpoint.
pub fn run_train<S: Scalar>(
    cfg: &Config,
    config_path: Option<&Path>,
    kind: ModelKind,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<RunManifest> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("no seeds requested".into()));
    }
    let started = Utc::now();
    let hash = cfg.hash()?;
    let config_text = cfg.to_toml()?;
    let records = cfg.load_records()?;
    let dataset = Dataset::new(&records, kind.modality(), &cfg.data)?;
    fs::create_dir_all(out_dir.join(kind.name()))?;

    let header = |seed: u64, phase: u32, epoch: usize| CheckpointHeader {
        config_hash: hash.clone(),
        model: kind.name().to_string(),
        seed,
        phase,
        epoch,
        missing_frac: cfg.data.missing_frac,
        scalar: S::NAME.to_string(),
        extra: serde_json::json!({ "config": config_text, "normalizer": dataset.normalizer }),
    };
    let outcomes = seeds
        .par_iter()
        .map(|&seed| {
            let clock = Instant::now();
            let data = dataset.train_data::<S>(kind, cfg, seed)?;
            let res = train_protocol(kind, &cfg.model, &data, &cfg.train, &cfg.assim, seed)?;
            for ph in &res.phases {
                write_curve(&phase_path(out_dir, kind, seed, ph.phase, "-curve.csv"), &ph.curve)?;
                let h = header(seed, ph.phase, ph.best_epoch);
                checkpoint::save(&phase_path(out_dir, kind, seed, ph.phase, ".ckpt"), &h, &ph.best_params)?;
            }
            let last = res.phases.last().expect("at least one phase");
            let path = checkpoint_path(out_dir, kind, seed);
            checkpoint::save(&path, &header(seed, last.phase, last.best_epoch), &res.model.params)?;
            Ok((path, clock.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;

    let (checkpoints, wall_seconds) = outcomes.into_iter().unzip();
    let manifest = RunManifest {
        config_path: config_path.map(Path::to_path_buf),
        config_hash: hash,
        model: kind.name().to_string(),
        seeds: seeds.to_vec(),
        output_dir: out_dir.to_path_buf(),
        checkpoints,
        started,
        finished: Utc::now(),
        wall_seconds,
    };
    let file = fs::File::create(out_dir.join(kind.name()).join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct EvalOutputs {
    pub report: EvalReport,
    pub scatter: Vec<ScatterRow>,
}

/// Scores a set of checkpoints of one model trained with one config and
/// writes the report files and plot data to `out_dir`.
pub fn run_eval<S: Scalar>(
    checkpoints: &[PathBuf],
    data: Option<&Path>,
    baseline_pb: Option<f64>,
    out_dir: &Path,
) -> Result<EvalOutputs> {
    if checkpoints.is_empty() {
        return Err(Error::Config("no checkpoints given".into()));
    }
    let loaded = checkpoints
        .iter()
        .map(|p| checkpoint::load::<S>(p))
        .collect::<Result<Vec<_>>>()?;
    let first = &loaded[0].0;
    for (h, _) in &loaded[1..] {
        if h.config_hash != first.config_hash || h.model != first.model {
            return Err(Error::Checkpoint(format!(
                "checkpoint for {} / {} does not match {} / {}",
                h.model, h.config_hash, first.model, first.config_hash
            )));
        }
    }
    let config_text = first.extra["config"]
        .as_str()
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no config".into()))?;
    let mut cfg = Config::from_toml(config_text)?;
    if cfg.hash()? != first.config_hash {
        return Err(Error::Checkpoint("stored config does not match the recorded config hash".into()));
    }
    let normalizer = serde_json::from_value(first.extra["normalizer"].clone())?;
    if let Some(path) = data {
        cfg.data.dataset = Some(path.to_path_buf());
    }
    if let Some(pb) = baseline_pb {
        cfg.eval.baseline_pb = pb;
    }
    cfg.validate()?;
    let kind: ModelKind = first.model.parse()?;
    let dataset = Dataset::with_normalizer(&cfg.load_records()?, kind.modality(), &cfg.data, normalizer)?;

    let preds = loaded
        .iter()
        .map(|(_, params)| {
            let model = Model::with_params(kind, &cfg.model, params)?;
            test_predictions(&model, &dataset, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = loaded.iter().map(|(h, _)| h.seed).collect();
    let (report, scatter) = score_runs(&dataset, &cfg, kind, &first.config_hash, &seeds, &preds)?;

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.txt"), report.to_table())?;
    report.write_csv(BufWriter::new(fs::File::create(out_dir.join("report.csv"))?))?;
    serde_json::to_writer_pretty(BufWriter::new(fs::File::create(out_dir.join("report.json"))?), &report)?;
    report.write_hourly_profile(BufWriter::new(fs::File::create(out_dir.join("hourly_profile.csv"))?))?;
    ScatterRow::write_csv(
        &scatter,
        kind.modality().has_ecmwf(),
        BufWriter::new(fs::File::create(out_dir.join("scatter.csv"))?),
    )?;
    Ok(EvalOutputs { report, scatter })
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            find_reports(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "report.json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Merges every `report.json` below `runs_dir` into `consolidated.txt` and
/// `consolidated.csv` in `runs_dir`.
pub fn run_report(runs_dir: &Path) -> Result<Vec<ConsolidatedRow>> {
    let mut paths = Vec::new();
    find_reports(runs_dir, &mut paths)?;
    let reports = paths
        .iter()
        .map(|p| Ok(serde_json::from_slice::<EvalReport>(&fs::read(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    let rows = ConsolidatedRow::consolidate(&reports)?;
    fs::write(runs_dir.join("consolidated.txt"), ConsolidatedRow::to_table(&rows))?;
    ConsolidatedRow::write_csv(&rows, BufWriter::new(fs::File::create(runs_dir.join("consolidated.csv"))?))?;
    Ok(rows)
}
