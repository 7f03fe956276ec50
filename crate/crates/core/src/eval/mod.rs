//! Metrics and reports: RMSE, multi-run aggregation, relative gain, hourly
//! error profile and scatter export. All inputs are in m/s.

mod report;

pub use report::{ConsolidatedRow, EvalReport, ScatterRow};

use crate::error::{Error, Result};

/// Score of the reference regression baseline (m/s).
pub const DEFAULT_BASELINE_PB: f64 = 0.95;

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("rmse of {} predictions against {} values", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Config("rmse of an empty series".into()));
    }
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Median with the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Config("median of nothing".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Elementwise median across runs.
pub fn n_median_aggregate(runs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = runs.first().ok_or_else(|| Error::Config("no runs to aggregate".into()))?;
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(Error::shape("runs have different lengths"));
    }
    let mut column = vec![0.0; runs.len()];
    (0..first.len())
        .map(|i| {
            for (c, r) in column.iter_mut().zip(runs) {
                *c = r[i];
            }
            median(&column)
        })
        .collect()
}

/// RMSE of the elementwise median of `runs`.
pub fn n_median_rmse(runs: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    rmse(&n_median_aggregate(runs)?, truth)
}

/// `(1 - p_i / p_b) * 100` without rounding.
pub fn relative_gain_exact(p_b: f64, p_i: f64) -> Result<f64> {
    if !(p_b > 0.0) {
        return Err(Error::Config(format!("baseline score must be positive, got {p_b}")));
    }
    Ok((1.0 - p_i / p_b) * 100.0)
}

/// Relative gain in percent, rounded to one decimal.
pub fn relative_gain(p_b: f64, p_i: f64) -> Result<f64> {
    relative_gain_exact(p_b, p_i).map(round1)
}

/// Rounds half away from zero to one decimal.
pub fn round1(v: f64) -> f64 {
    let r = (v * 10.0).round() / 10.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Mean of every hour over the windows covering it. `windows[i]` starts at
/// hour `starts[i]`; hours covered by no window are `None`.
pub fn deoverlap(windows: &[Vec<f64>], starts: &[usize], n_hours: usize) -> Result<Vec<Option<f64>>> {
    if windows.len() != starts.len() {
        return Err(Error::shape("one start per window required"));
    }
    let mut sum = vec![0.0; n_hours];
    let mut count = vec![0usize; n_hours];
    for (w, &s) in windows.iter().zip(starts) {
        if s + w.len() > n_hours {
            return Err(Error::shape(format!("window at {s} of length {} exceeds {n_hours} hours", w.len())));
        }
        for (k, v) in w.iter().enumerate() {
            sum[s + k] += v;
            count[s + k] += 1;
        }
    }
    Ok(sum.iter().zip(&count).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect())
}

/// Mean of `pred - truth` at each position within the window.
pub fn hourly_error_profile(preds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<Vec<f64>> {
    let len = preds.first().map(Vec::len).ok_or_else(|| Error::Config("no windows".into()))?;
    if preds.len() != truths.len() || preds.iter().chain(truths).any(|w| w.len() != len) {
        return Err(Error::shape("prediction and truth windows must share one shape"));
    }
    let mut acc = vec![0.0; len];
    for (p, t) in preds.iter().zip(truths) {
        for k in 0..len {
            acc[k] += p[k] - t[k];
        }
    }
    Ok(acc.iter().map(|a| a / preds.len() as f64).collect())
}

/// Sample quartiles with linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Result<[f64; 3]> {
    if values.is_empty() {
        return Err(Error::Config("quartiles of nothing".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Ok([q(0.25), q(0.5), q(0.75)])
}

/// Arithmetic mean and, for two or more values, the sample standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.is_empty() {
        return Err(Error::Config("mean of nothing".into()));
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2)
        .then(|| (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt());
    Ok((m, std))
}

#[cfg(test)]
mod tests;
