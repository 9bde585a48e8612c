//! Minimal dense neural-network core: the layer set the encoders and heads
//! need, with analytic backward passes.

mod conv;
pub mod functional;
mod layers;
mod network;
mod params;
mod recurrent;

pub use functional::{argmax, leaky_relu, sigmoid, softmax};
pub use layers::{Activation, Cache, Init, Layer, LayerSpec, ParamShape, PoolKind};
pub use network::{Sequential, Tape};
pub use params::{ParamId, ParamSet};
pub use recurrent::{gru_cell, lstm_cell};
