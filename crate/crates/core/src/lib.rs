//! Hierarchical human-activity recognition from a single 6-axis head-worn
//! IMU.
//!
//! A small low-level encoder turns each 1 s window into a motion embedding;
//! a high-level head classifies the sequence of embeddings over a longer
//! window. Both are trained jointly from high-level labels only, and the
//! frozen encoder can then be probed for low-level activities.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod models;
pub mod nn;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
