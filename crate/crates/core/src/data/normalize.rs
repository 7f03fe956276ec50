use serde::{Deserialize, Serialize};

use super::Series;
use crate::error::{Error, Result};

/// Per-channel z-score fitted on available training entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(series: &Series) -> Result<Self> {
        let c = series.channels();
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        for ch in 0..c {
            let vals: Vec<f64> = (0..series.len())
                .filter(|&h| series.available(h, ch))
                .map(|h| series.value(h, ch))
                .collect();
            if vals.is_empty() {
                return Err(Error::Ingest(format!("channel {ch} has no training observations")));
            }
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            if !(var > 0.0) {
                return Err(Error::Ingest(format!("channel {ch} has zero variance on the training region")));
            }
            mean.push(m);
            std.push(var.sqrt());
        }
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize(&self, channel: usize, z: f64) -> f64 {
        z * self.std[channel] + self.mean[channel]
    }

    /// Wind is the last channel.
    pub fn denormalize_wind(&self, z: f64) -> f64 {
        self.denormalize(self.channels() - 1, z)
    }
}
