use std::ops::Range;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HourlyRecord, Normalizer, UPA_BANDS};
use crate::array::Array;
use crate::assim::{observe, Obs};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const WINDOW_LEN: usize = 24;
pub const DEFAULT_TEST_HOURS: usize = 1200;
pub const DEFAULT_VAL_HOURS: usize = 1200;

/// Drops hours without in-situ wind, then every calendar day (UTC) that is
/// left with fewer than 24 wind values. Hours missing UPA or ECMWF are kept.
pub fn colocate(records: &[HourlyRecord]) -> Result<Vec<HourlyRecord>> {
    for pair in records.windows(2) {
        let (a, b) = (pair[0].timestamp, pair[1].timestamp);
        if a == b {
            return Err(Error::Ingest(format!("duplicate timestamp {a}")));
        }
        if b < a {
            return Err(Error::Ingest(format!("timestamps not sorted: {b} after {a}")));
        }
    }
    for r in records {
        if r.timestamp.timestamp() % 3600 != 0 {
            return Err(Error::Ingest(format!("timestamp {} is not on the hour", r.timestamp)));
        }
        if let Some(u) = &r.upa {
            if u.len() != UPA_BANDS {
                return Err(Error::Ingest(format!(
                    "{}: expected {UPA_BANDS} UPA bands, got {}",
                    r.timestamp,
                    u.len()
                )));
            }
        }
        for (name, v) in [("wind", r.wind), ("ecmwf", r.ecmwf)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Ingest(format!("{}: invalid {name} speed {v}", r.timestamp)));
                }
            }
        }
    }

    let with_wind: Vec<&HourlyRecord> = records.iter().filter(|r| r.wind.is_some()).collect();
    let mut out = Vec::with_capacity(with_wind.len());
    let mut i = 0;
    while i < with_wind.len() {
        let day = with_wind[i].timestamp.date_naive();
        let mut j = i;
        while j < with_wind.len() && with_wind[j].timestamp.date_naive() == day {
            j += 1;
        }
        if j - i == 24 {
            out.extend(with_wind[i..j].iter().map(|&r| r.clone()));
        }
        i = j;
    }
    Ok(out)
}

/// Which observable modalities enter the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Upa,
    UpaEcmwf,
}

impl Modality {
    /// State channels: UPA bands, ECMWF if present, then wind.
    pub fn channels(self) -> usize {
        match self {
            Modality::Upa => UPA_BANDS + 1,
            Modality::UpaEcmwf => UPA_BANDS + 2,
        }
    }

    pub fn has_ecmwf(self) -> bool {
        self == Modality::UpaEcmwf
    }

    pub fn wind_channel(self) -> usize {
        self.channels() - 1
    }
}

/// Dense hour-by-channel table in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    modality: Modality,
    timestamps: Vec<DateTime<Utc>>,
    /// `hours x channels`, 0 where unavailable.
    values: Vec<f64>,
    avail: Vec<bool>,
    /// ECMWF value per hour regardless of modality, for exports.
    ecmwf: Vec<Option<f64>>,
}

impl Series {
    /// Builds the table from co-located records (every hour has wind).
    pub fn from_records(records: &[HourlyRecord], modality: Modality) -> Result<Self> {
        let c = modality.channels();
        let mut values = vec![0.0; records.len() * c];
        let mut avail = vec![false; records.len() * c];
        for (h, r) in records.iter().enumerate() {
            let row = h * c;
            if let Some(u) = &r.upa {
                values[row..row + UPA_BANDS].copy_from_slice(u);
                avail[row..row + UPA_BANDS].iter_mut().for_each(|a| *a = true);
            }
            if let (true, Some(e)) = (modality.has_ecmwf(), r.ecmwf) {
                values[row + UPA_BANDS] = e;
                avail[row + UPA_BANDS] = true;
            }
            let w = r.wind.ok_or_else(|| {
                Error::Ingest(format!("{}: hour without in-situ wind; run colocate first", r.timestamp))
            })?;
            values[row + c - 1] = w;
            avail[row + c - 1] = true;
        }
        Ok(Self {
            modality,
            timestamps: records.iter().map(|r| r.timestamp).collect(),
            values,
            avail,
            ecmwf: records.iter().map(|r| r.ecmwf).collect(),
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn channels(&self) -> usize {
        self.modality.channels()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn value(&self, hour: usize, channel: usize) -> f64 {
        self.values[hour * self.channels() + channel]
    }

    pub fn available(&self, hour: usize, channel: usize) -> bool {
        self.avail[hour * self.channels() + channel]
    }

    pub fn wind(&self, hour: usize) -> f64 {
        self.value(hour, self.channels() - 1)
    }

    pub fn ecmwf(&self, hour: usize) -> Option<f64> {
        self.ecmwf[hour]
    }

    pub fn slice(&self, range: Range<usize>) -> Series {
        let c = self.channels();
        Series {
            modality: self.modality,
            timestamps: self.timestamps[range.clone()].to_vec(),
            values: self.values[range.start * c..range.end * c].to_vec(),
            avail: self.avail[range.start * c..range.end * c].to_vec(),
            ecmwf: self.ecmwf[range].to_vec(),
        }
    }

    /// Maximal runs of consecutive hours.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for h in 1..=self.len() {
            if h == self.len() || self.timestamps[h] - self.timestamps[h - 1] != Duration::hours(1) {
                if h > start {
                    out.push(start..h);
                }
                start = h;
            }
        }
        out
    }

    /// Test = first `test_hours`, validation = the next `val_hours`, train = the rest.
    pub fn split(&self, test_hours: usize, val_hours: usize) -> Result<Splits> {
        if self.len() < test_hours + val_hours + WINDOW_LEN + 1 {
            return Err(Error::Ingest(format!(
                "{} hours cannot hold a {test_hours} h test and {val_hours} h validation split plus training data",
                self.len()
            )));
        }
        Ok(Splits {
            test: self.slice(0..test_hours),
            val: self.slice(test_hours..test_hours + val_hours),
            train: self.slice(test_hours + val_hours..self.len()),
        })
    }

    /// Gathers windows `[start, start + len)` into normalized arrays.
    pub fn gather<S: Scalar>(&self, starts: &[usize], len: usize, norm: &Normalizer) -> Result<SeriesBatch<S>> {
        let c = self.channels();
        if norm.channels() != c {
            return Err(Error::shape(format!(
                "normalizer has {} channels, series has {c}",
                norm.channels()
            )));
        }
        let b = starts.len();
        let mut x = vec![S::zero(); b * c * len];
        let mut m = vec![S::zero(); b * c * len];
        for (n, &s) in starts.iter().enumerate() {
            if s + len > self.len() {
                return Err(Error::shape(format!("window {s}+{len} exceeds {} hours", self.len())));
            }
            for ch in 0..c {
                for t in 0..len {
                    let h = s + t;
                    let k = (n * c + ch) * len + t;
                    if self.available(h, ch) {
                        x[k] = S::lit(norm.normalize(ch, self.value(h, ch)));
                        m[k] = S::one();
                    }
                }
            }
        }
        Ok(SeriesBatch {
            state: Array::new(vec![b, c, len], x)?,
            avail: Array::new(vec![b, c, len], m)?,
            starts: starts.to_vec(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Series,
    pub val: Series,
    pub test: Series,
}

/// Window starts `0..N-len` (stepped by `stride`) of every contiguous block;
/// a block of `N` hours gives `max(0, N - len)` windows at stride 1.
pub fn make_windows(series: &Series, len: usize, stride: usize) -> Vec<usize> {
    assert!(len >= 1 && stride >= 1);
    let mut out = Vec::new();
    for block in series.blocks() {
        let n = block.len();
        if n <= len {
            log::warn!("skipping block of {n} hours starting at {}", series.timestamps[block.start]);
            continue;
        }
        out.extend((0..n - len).step_by(stride).map(|s| block.start + s));
    }
    out
}

/// `count` window starts drawn uniformly with replacement from the valid
/// starts of `series`.
pub fn sample_train_windows(series: &Series, count: usize, len: usize, seed: u64) -> Result<Vec<usize>> {
    let valid = make_windows(series, len, 1);
    if valid.is_empty() {
        return Err(Error::Ingest("training region holds no complete window".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| valid[rng.gen_range(0..valid.len())]).collect())
}

/// Windows in normalized units with their availability mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesBatch<S> {
    /// `(B, C, T)`; 0 where unavailable.
    pub state: Array<S>,
    /// `(B, C, T)`; 1 where the entry exists.
    pub avail: Array<S>,
    /// Start hour of each window in its series.
    pub starts: Vec<usize>,
}

impl<S: Scalar> SeriesBatch<S> {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.state.dim(2)
    }

    pub fn channels(&self) -> usize {
        self.state.dim(1)
    }

    pub fn select(&self, idx: &[usize]) -> SeriesBatch<S> {
        let per = self.channels() * self.window_len();
        let pick = |a: &Array<S>| {
            let mut out = Vec::with_capacity(idx.len() * per);
            for &i in idx {
                out.extend_from_slice(&a.data()[i * per..(i + 1) * per]);
            }
            Array::from_parts(vec![idx.len(), self.channels(), self.window_len()], out)
        };
        SeriesBatch {
            state: pick(&self.state),
            avail: pick(&self.avail),
            starts: idx.iter().map(|&i| self.starts[i]).collect(),
        }
    }

    /// Observation operator applied to the batch.
    pub fn obs(&self) -> Result<Obs<S>> {
        observe(&self.state, Some(&self.avail))
    }

    /// Normalized wind and its mask, each `(B, 1, T)`.
    pub fn wind(&self) -> (Array<S>, Array<S>) {
        let (b, c, t) = (self.len(), self.channels(), self.window_len());
        let take = |a: &Array<S>| Array::from_fn(&[b, 1, t], |i| a.data()[((i / t) * c + c - 1) * t + i % t]);
        (take(&self.state), take(&self.avail))
    }
}
