//! Ingestion, clean-up, windowing and the synthetic stand-in dataset.

mod csv_io;
mod missing;
mod normalize;
mod series;
pub mod synth;

pub use csv_io::{read_csv, read_csv_path, write_csv, write_csv_path};
pub use missing::{MaskSpec, MissingMask};
pub use normalize::Normalizer;
pub use series::{
    colocate, make_windows, sample_train_windows, Modality, Series, SeriesBatch, Splits,
    DEFAULT_TEST_HOURS, DEFAULT_VAL_HOURS, WINDOW_LEN,
};
pub use synth::{synth_generate, SynthConfig, SynthStats};

use chrono::{DateTime, Utc};

/// Number of spectral bands in one acoustic record.
pub const UPA_BANDS: usize = 64;

/// One hour of raw data. Missing modalities are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct HourlyRecord {
    pub timestamp: DateTime<Utc>,
    pub upa: Option<Vec<f64>>,
    pub ecmwf: Option<f64>,
    pub wind: Option<f64>,
}
