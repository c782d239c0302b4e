//! Gradient compression: seeded shuffle, Rademacher signs, bucket sums.

pub mod plan;
pub mod rapidgrad;
pub mod size;
pub mod spec;

pub use plan::{proper_divisors, ProjectionPlan, ShufflePlan, ShuffleStep};
pub use rapidgrad::{apply_shuffle, compress, compress_values, sketch_inner, RapidGrad};
pub use size::{compression_ratio, quoted_reduction, table_size_label, CompressionRatio};
pub use spec::{
    make_sketch_spec, padded_length, recommended_lambda, SignMode, SketchParams, SketchSpec, SpecId, DEFAULT_LAMBDA,
};
