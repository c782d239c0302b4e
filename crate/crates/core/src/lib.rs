//! Training-data influence tracing with compressed gradient sketches.
//!
//! Per-example gradients of a model are layer-normalized, shuffled, signed
//! and bucket-summed into short half-precision sketches. Sketches are cached
//! once; influence of a training example on a query is then the scaled inner
//! product of their sketches. A small next-token model with exact gradients
//! ships alongside so every estimate can be checked against the uncompressed
//! computation.

pub mod bench;
pub mod cache;
pub mod error;
pub mod eval;
pub mod grad;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod scalar;
pub mod sketch;
pub mod source;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use source::SourceId;

pub type ToyLm64 = grad::ToyLm<f64>;
pub type ToyLm32 = grad::ToyLm<f32>;
pub type FlatGradient64 = grad::FlatGradient<f64>;
pub type FlatGradient32 = grad::FlatGradient<f32>;
