use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SeriesBatch, UPA_BANDS};
use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Artificial removal of whole acoustic spectra.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub missing_frac: f64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.9).contains(&self.missing_frac) {
            return Err(Error::Mask(format!(
                "missing fraction must lie in [0, 0.9], got {}",
                self.missing_frac
            )));
        }
        Ok(())
    }
}

/// One keep/drop flag per window and time step; `true` = UPA dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MissingMask {
    windows: usize,
    len: usize,
    dropped: Vec<bool>,
}

impl MissingMask {
    /// Independent Bernoulli(`missing_frac`) draw per step.
    pub fn draw(spec: &MaskSpec, windows: usize, len: usize) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let dropped = (0..windows * len)
            .map(|_| spec.missing_frac > 0.0 && rng.gen_bool(spec.missing_frac))
            .collect();
        Ok(Self { windows, len, dropped })
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn window_len(&self) -> usize {
        self.len
    }

    pub fn is_dropped(&self, window: usize, step: usize) -> bool {
        self.dropped[window * self.len + step]
    }

    pub fn dropped_count(&self) -> usize {
        self.dropped.iter().filter(|&&d| d).count()
    }

    /// Zeroes UPA values and mask bits at dropped steps. ECMWF and wind
    /// channels are untouched.
    pub fn apply<S: Scalar>(&self, batch: &SeriesBatch<S>) -> Result<SeriesBatch<S>> {
        if batch.len() != self.windows || batch.window_len() != self.len {
            return Err(Error::shape(format!(
                "mask is {}x{}, batch is {}x{}",
                self.windows,
                self.len,
                batch.len(),
                batch.window_len()
            )));
        }
        let (c, t) = (batch.channels(), self.len);
        let keep = |i: usize| {
            let (n, ch, step) = (i / (c * t), (i / t) % c, i % t);
            !(ch < UPA_BANDS && self.is_dropped(n, step))
        };
        let filter = |a: &Array<S>| {
            Array::from_fn(a.shape(), |i| if keep(i) { a.data()[i] } else { S::zero() })
        };
        Ok(SeriesBatch { state: filter(&batch.state), avail: filter(&batch.avail), starts: batch.starts.clone() })
    }

    /// One row per window, one 0/1 column per step (1 = observed).
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        for row in self.dropped.chunks(self.len.max(1)) {
            let line: Vec<&str> = row.iter().map(|&d| if d { "0" } else { "1" }).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(mut r: impl Read) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut dropped = Vec::new();
        let mut len = None;
        let mut windows = 0;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: Vec<bool> = line
                .split(',')
                .map(|f| match f.trim() {
                    "1" => Ok(false),
                    "0" => Ok(true),
                    other => Err(Error::Mask(format!("line {}: expected 0 or 1, got `{other}`", i + 1))),
                })
                .collect::<Result<_>>()?;
            match len {
                None => len = Some(row.len()),
                Some(l) if l != row.len() => {
                    return Err(Error::Mask(format!("line {}: expected {l} columns, got {}", i + 1, row.len())))
                }
                _ => {}
            }
            dropped.extend(row);
            windows += 1;
        }
        Ok(Self { windows, len: len.unwrap_or(0), dropped })
    }
}
