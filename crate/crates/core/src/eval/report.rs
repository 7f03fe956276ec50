use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{mean_std, n_median_aggregate, quartiles, relative_gain, rmse};
use crate::error::{Error, Result};

/// Test-set scores of one model trained with several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub missing_frac: f64,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub per_seed_rmse: Vec<f64>,
    pub mean_rmse: f64,
    pub std_rmse: Option<f64>,
    /// Quartiles of the per-seed RMSEs, lowest first.
    pub quartiles: [f64; 3],
    pub n_median_rmse: f64,
    pub baseline_pb: f64,
    pub eta_percent: f64,
    /// Mean error at each position of the 24 h window, for the aggregated prediction.
    pub hourly_mean_error: Vec<f64>,
    pub test_hours: usize,
}

impl EvalReport {
    /// `runs[i]` holds the hourly predictions of seed `seeds[i]` for the
    /// hours in `truth`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_runs(
        model: &str,
        missing_frac: f64,
        config_hash: &str,
        seeds: &[u64],
        runs: &[Vec<f64>],
        truth: &[f64],
        hourly_mean_error: Vec<f64>,
        baseline_pb: f64,
    ) -> Result<Self> {
        if runs.len() != seeds.len() || runs.is_empty() {
            return Err(Error::Config("one prediction series per seed required".into()));
        }
        let per_seed_rmse = runs.iter().map(|r| rmse(r, truth)).collect::<Result<Vec<_>>>()?;
        let (mean_rmse, std_rmse) = mean_std(&per_seed_rmse)?;
        let n_median_rmse = rmse(&n_median_aggregate(runs)?, truth)?;
        Ok(Self {
            model: model.to_string(),
            missing_frac,
            config_hash: config_hash.to_string(),
            seeds: seeds.to_vec(),
            quartiles: quartiles(&per_seed_rmse)?,
            per_seed_rmse,
            mean_rmse,
            std_rmse,
            n_median_rmse,
            baseline_pb,
            eta_percent: relative_gain(baseline_pb, n_median_rmse)?,
            hourly_mean_error,
            test_hours: truth.len(),
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model            {}", self.model);
        let _ = writeln!(s, "missing data     {:.0}%", self.missing_frac * 100.0);
        let _ = writeln!(s, "config hash      {}", self.config_hash);
        let _ = writeln!(s, "test hours       {}", self.test_hours);
        let _ = writeln!(s, "\n seed   RMSE (m/s)");
        for (seed, r) in self.seeds.iter().zip(&self.per_seed_rmse) {
            let _ = writeln!(s, " {seed:>4}   {r:.4}");
        }
        let std = self.std_rmse.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
        let [q1, q2, q3] = self.quartiles;
        let _ = writeln!(s, "\nmean ± std       {:.4} ± {std}", self.mean_rmse);
        let _ = writeln!(s, "quartiles        {q1:.4} / {q2:.4} / {q3:.4}");
        let _ = writeln!(s, "n-Median         {:.4}", self.n_median_rmse);
        let _ = writeln!(s, "eta vs {:.2}      {:.1}%", self.baseline_pb, self.eta_percent);
        s
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "key,value")?;
        writeln!(w, "model,{}", self.model)?;
        writeln!(w, "missing_frac,{}", self.missing_frac)?;
        writeln!(w, "config_hash,{}", self.config_hash)?;
        for (seed, r) in self.seeds.iter().zip(&self.per_seed_rmse) {
            writeln!(w, "rmse_seed_{seed},{r}")?;
        }
        writeln!(w, "mean_rmse,{}", self.mean_rmse)?;
        writeln!(w, "std_rmse,{}", self.std_rmse.map(|v| v.to_string()).unwrap_or_default())?;
        writeln!(w, "q1_rmse,{}", self.quartiles[0])?;
        writeln!(w, "median_rmse,{}", self.quartiles[1])?;
        writeln!(w, "q3_rmse,{}", self.quartiles[2])?;
        writeln!(w, "n_median_rmse,{}", self.n_median_rmse)?;
        writeln!(w, "baseline_pb,{}", self.baseline_pb)?;
        writeln!(w, "eta_percent,{}", self.eta_percent)?;
        Ok(())
    }

    pub fn write_hourly_profile(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "position,mean_error")?;
        for (k, e) in self.hourly_mean_error.iter().enumerate() {
            writeln!(w, "{k},{e}")?;
        }
        Ok(())
    }
}

/// One test hour of the aggregated reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub timestamp: String,
    pub truth: f64,
    pub prediction: f64,
    pub ecmwf: Option<f64>,
}

impl ScatterRow {
    pub fn write_csv(rows: &[ScatterRow], with_ecmwf: bool, mut w: impl Write) -> Result<()> {
        if with_ecmwf {
            writeln!(w, "iso_timestamp,truth,prediction,ecmwf")?;
        } else {
            writeln!(w, "iso_timestamp,truth,prediction")?;
        }
        for r in rows {
            if with_ecmwf {
                let e = r.ecmwf.map(|v| v.to_string()).unwrap_or_default();
                writeln!(w, "{},{},{},{e}", r.timestamp, r.truth, r.prediction)?;
            } else {
                writeln!(w, "{},{},{}", r.timestamp, r.truth, r.prediction)?;
            }
        }
        Ok(())
    }
}

/// One line of the cross-model comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedRow {
    pub model: String,
    pub missing_frac: f64,
    pub mean_rmse: f64,
    pub std_rmse: Option<f64>,
    pub n_median_rmse: f64,
    pub eta_percent: f64,
    pub stored_eta_percent: f64,
}

impl ConsolidatedRow {
    /// Rows ordered by missing fraction, then by n-Median RMSE. The gain is
    /// recomputed from the stored n-Median.
    pub fn consolidate(reports: &[EvalReport]) -> Result<Vec<ConsolidatedRow>> {
        let mut rows = reports
            .iter()
            .map(|r| {
                Ok(ConsolidatedRow {
                    model: r.model.clone(),
                    missing_frac: r.missing_frac,
                    mean_rmse: r.mean_rmse,
                    std_rmse: r.std_rmse,
                    n_median_rmse: r.n_median_rmse,
                    eta_percent: relative_gain(r.baseline_pb, r.n_median_rmse)?,
                    stored_eta_percent: r.eta_percent,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.sort_by(|a, b| {
            a.missing_frac
                .total_cmp(&b.missing_frac)
                .then(a.n_median_rmse.total_cmp(&b.n_median_rmse))
                .then(a.model.cmp(&b.model))
        });
        Ok(rows)
    }

    pub fn to_table(rows: &[ConsolidatedRow]) -> String {
        let mut s = format!("{:<20} {:>8} {:>18} {:>10} {:>8}\n", "model", "missing", "mean ± std", "n-Median", "eta %");
        for r in rows {
            let std = r.std_rmse.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                s,
                "{:<20} {:>7.0}% {:>18} {:>10.3} {:>8.1}",
                r.model,
                r.missing_frac * 100.0,
                format!("{:.3} ± {std}", r.mean_rmse),
                r.n_median_rmse,
                r.eta_percent
            );
        }
        s
    }

    pub fn write_csv(rows: &[ConsolidatedRow], mut w: impl Write) -> Result<()> {
        writeln!(w, "model,missing_frac,mean_rmse,std_rmse,n_median_rmse,eta_percent")?;
        for r in rows {
            let std = r.std_rmse.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{std},{},{}",
                r.model, r.missing_frac, r.mean_rmse, r.n_median_rmse, r.eta_percent
            )?;
        }
        Ok(())
    }
}
