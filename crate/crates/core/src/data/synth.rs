//! Synthetic stand-in for the co-located observatory dataset.
//!
//! Wind follows `u = softplus(m + A cos(2π(h − φ)/24) + z)` with `z` an
//! Ornstein-Uhlenbeck process (Euler steps of one hour). Band `b` of the
//! spectrum is `a_b (log10(min(u, u_sat) + 0.5) + ξ) + c_b + ζ_b`, where the
//! per-hour source term `ξ` is shared by all bands and `ζ_b` is independent
//! per band. Reanalysis wind is a centred moving average of `u` plus a bias
//! and white noise whose level is calibrated to a target RMSE.

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{HourlyRecord, UPA_BANDS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub start: DateTime<Utc>,
    pub wind_offset: f64,
    pub diurnal_amplitude: f64,
    pub diurnal_phase_hours: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    /// Acoustic saturation speed (m/s).
    pub u_sat: f64,
    pub gain_base: f64,
    pub gain_peak: f64,
    pub gain_width: f64,
    /// Band indices of the gain maxima (about 8 and 20 kHz).
    pub peak_bands: Vec<usize>,
    pub level_base: f64,
    pub level_slope: f64,
    /// Std of the shared per-hour source term, in log10 units.
    pub common_noise: f64,
    /// Std of the independent per-band term, in dB.
    pub band_noise: f64,
    pub ecmwf_window: usize,
    pub ecmwf_bias: f64,
    /// Fixed reanalysis noise std; calibrated when absent.
    pub ecmwf_noise: Option<f64>,
    pub target_rmse: f64,
    pub rmse_range: [f64; 2],
    pub r2_range: [f64; 2],
    pub calib_hours: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            start: DateTime::parse_from_rfc3339("2011-06-17T00:00:00Z").unwrap().with_timezone(&Utc),
            wind_offset: 4.5,
            diurnal_amplitude: 0.6,
            diurnal_phase_hours: 15.0,
            ou_theta: 0.05,
            ou_sigma: 1.1,
            u_sat: 15.0,
            gain_base: 8.0,
            gain_peak: 16.0,
            gain_width: 4.0,
            peak_bands: vec![10, 25],
            level_base: 70.0,
            level_slope: -0.4,
            common_noise: 0.06,
            band_noise: 1.0,
            ecmwf_window: 7,
            ecmwf_bias: 0.3,
            ecmwf_noise: None,
            target_rmse: 1.71,
            rmse_range: [1.56, 1.86],
            r2_range: [0.61, 0.81],
            calib_hours: 20_000,
        }
    }
}

impl SynthConfig {
    /// Gain `a_b` of each band.
    pub fn band_gains(&self) -> Vec<f64> {
        (0..UPA_BANDS)
            .map(|b| {
                let peak = self
                    .peak_bands
                    .iter()
                    .map(|&p| (-0.5 * ((b as f64 - p as f64) / self.gain_width).powi(2)).exp())
                    .fold(0.0, f64::max);
                self.gain_base + self.gain_peak * peak
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if !(self.ou_theta > 0.0 && self.ou_theta < 1.0) {
            return bad("ou_theta must lie in (0, 1)");
        }
        if self.ou_sigma < 0.0 || self.common_noise < 0.0 || self.band_noise < 0.0 {
            return bad("noise levels must be non-negative");
        }
        if self.ecmwf_window == 0 || self.ecmwf_window % 2 == 0 {
            return bad("ecmwf_window must be odd");
        }
        if self.u_sat <= 0.0 || self.gain_width <= 0.0 {
            return bad("u_sat and gain_width must be positive");
        }
        Ok(())
    }
}

/// Agreement between reanalysis and in-situ wind on the calibration span.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub ecmwf_noise: f64,
    pub rmse: f64,
    pub r2: f64,
    pub max_wind: f64,
    pub hours: usize,
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn wind_series(n: usize, seed: u64, cfg: &SynthConfig) -> Vec<f64> {
    let mut rng = stream(seed, 1);
    let th = cfg.ou_theta;
    let stationary = cfg.ou_sigma / (2.0 * th - th * th).sqrt();
    let mut z = stationary * gauss(&mut rng);
    let mut out = Vec::with_capacity(n);
    for h in 0..n {
        let hour = (cfg.start + Duration::hours(h as i64)).timestamp().rem_euclid(86_400) as f64 / 3600.0;
        let diurnal = cfg.diurnal_amplitude
            * (2.0 * std::f64::consts::PI * (hour - cfg.diurnal_phase_hours) / 24.0).cos();
        out.push(softplus(cfg.wind_offset + diurnal + z));
        z += -th * z + cfg.ou_sigma * gauss(&mut rng);
    }
    out
}

fn moving_average(u: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..u.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(u.len());
            u[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn ecmwf_values(smooth: &[f64], xi: &[f64], bias: f64, sigma: f64) -> Vec<f64> {
    smooth.iter().zip(xi).map(|(s, x)| (s + bias + sigma * x).max(0.0)).collect()
}

/// RMSE and coefficient of determination of `e` as a predictor of `u`.
pub fn agreement(e: &[f64], u: &[f64]) -> (f64, f64) {
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let ss_res: f64 = e.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = u.iter().map(|b| (b - mean).powi(2)).sum();
    ((ss_res / n).sqrt(), 1.0 - ss_res / ss_tot)
}

pub fn synth_generate(n_hours: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<HourlyRecord>> {
    synth_generate_with_stats(n_hours, seed, cfg).map(|(r, _)| r)
}

/// Generates `n_hours` hourly records. The reanalysis noise level is
/// calibrated by bisection on the first `calib_hours` hours of the same
/// realisation (generated beyond `n_hours` when needed).
pub fn synth_generate_with_stats(
    n_hours: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<(Vec<HourlyRecord>, SynthStats)> {
    cfg.validate()?;
    if n_hours < 48 {
        return Err(Error::Config(format!("synth needs at least 48 hours, got {n_hours}")));
    }
    let total = n_hours.max(cfg.calib_hours);
    let u = wind_series(total, seed, cfg);
    let smooth = moving_average(&u, cfg.ecmwf_window);
    let mut rng = stream(seed, 3);
    let xi: Vec<f64> = (0..total).map(|_| gauss(&mut rng)).collect();

    let calib = cfg.calib_hours.max(1).min(total);
    let rmse_at = |sigma: f64| {
        let e = ecmwf_values(&smooth[..calib], &xi[..calib], cfg.ecmwf_bias, sigma);
        agreement(&e, &u[..calib])
    };
    let sigma = match cfg.ecmwf_noise {
        Some(s) => s,
        None => calibrate(|s| rmse_at(s).0, cfg.target_rmse)?,
    };
    let (rmse, r2) = rmse_at(sigma);
    if cfg.ecmwf_noise.is_none() {
        let [r_lo, r_hi] = cfg.rmse_range;
        let [q_lo, q_hi] = cfg.r2_range;
        if !(r_lo..=r_hi).contains(&rmse) || !(q_lo..=q_hi).contains(&r2) {
            return Err(Error::Calibration(format!(
                "reanalysis RMSE {rmse:.3} (target [{r_lo}, {r_hi}]) and R² {r2:.3} (target [{q_lo}, {q_hi}])"
            )));
        }
    }
    let ecmwf = ecmwf_values(&smooth[..n_hours], &xi[..n_hours], cfg.ecmwf_bias, sigma);

    let gains = cfg.band_gains();
    let mut rng = stream(seed, 2);
    let records = (0..n_hours)
        .map(|h| {
            let source = (u[h].min(cfg.u_sat) + 0.5).log10() + cfg.common_noise * gauss(&mut rng);
            let upa = (0..UPA_BANDS)
                .map(|b| {
                    let level = cfg.level_base + cfg.level_slope * b as f64;
                    gains[b] * source + level + cfg.band_noise * gauss(&mut rng)
                })
                .collect();
            HourlyRecord {
                timestamp: cfg.start + Duration::hours(h as i64),
                upa: Some(upa),
                ecmwf: Some(ecmwf[h]),
                wind: Some(u[h]),
            }
        })
        .collect();
    let stats = SynthStats {
        ecmwf_noise: sigma,
        rmse,
        r2,
        max_wind: u[..n_hours].iter().copied().fold(f64::MIN, f64::max),
        hours: calib,
    };
    Ok((records, stats))
}

/// Bisection for `f(σ) = target` on `[0, 20]`; `f` must cross upward.
fn calibrate(f: impl Fn(f64) -> f64, target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, 20.0);
    if f(lo) > target {
        return Err(Error::Calibration(format!(
            "smoothing and bias alone give RMSE {:.3} above the target {target}",
            f(lo)
        )));
    }
    if f(hi) < target {
        return Err(Error::Calibration(format!("noise std {hi} cannot reach RMSE {target}")));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
