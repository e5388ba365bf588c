//! Deterministic CPU tensors with reverse-mode differentiation.
//!
//! Everything is `f64`. Forward values and gradients are checked for NaN and
//! infinity at every operation boundary; a non-finite value becomes
//! [`Error::NonFinite`](crate::Error::NonFinite) instead of propagating.

pub mod checkpoint;
mod conv;
mod loss;
mod params;
mod pointwise;
mod pool;
mod tensor;

pub use params::{adam_step, AdamState, Param, ParamSet};
pub use tensor::Tensor;
