//! Learned variational assimilation of hourly wind speed from underwater
//! acoustic spectra, with an optional reanalysis channel.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`).

pub mod array;
pub mod assim;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod priors;
pub mod scalar;
pub mod train;

pub use array::Array;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Array64 = Array<f64>;
pub type Array32 = Array<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Params64 = nn::Params<f64>;
pub type Params32 = nn::Params<f32>;
pub type Model64 = train::Model<f64>;
pub type Model32 = train::Model<f32>;
