//! Piecewise-constant temporal radiance fields: step-function time
//! encoding, a factored space-time field with per-image illumination
//! embeddings, volume rendering, training and temporal-stability metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod encoding;
pub mod error;
pub mod field;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod render;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Field32 = field::ChronoField<f32>;
pub type Field64 = field::ChronoField<f64>;
