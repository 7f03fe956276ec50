//! Layers and the optimizer, over a shared parameter store.

mod adam;
pub mod checkpoint;
mod layers;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use layers::{leaky_relu, Conv1d, ConvLstmCell, Linear, LEAKY_SLOPE};
pub use params::{init_uniform, param_grad_check, Bound, ParamId, Params};
