//! Gradient to sketch, the same way for training data and queries.

use crate::error::Result;
use crate::grad::{layerwise_normalize, FlatGradient, ToyLm, ToySample};
use crate::scalar::Scalar;
use crate::sketch::{compress, RapidGrad, SketchSpec};

/// Layer-normalized exact gradient of the whole sample.
pub fn normalized_sample_gradient<T: Scalar>(model: &ToyLm<T>, sample: &ToySample) -> Result<FlatGradient<T>> {
    Ok(layerwise_normalize(&model.sample_gradient(sample)?).0)
}

/// Layer-normalized exact gradient of one generation position.
pub fn normalized_token_gradient<T: Scalar>(
    model: &ToyLm<T>,
    sample: &ToySample,
    token_index: usize,
) -> Result<FlatGradient<T>> {
    Ok(layerwise_normalize(&model.token_gradient(sample, token_index)?).0)
}

pub fn sketch_sample<T: Scalar>(model: &ToyLm<T>, sample: &ToySample, spec: &SketchSpec) -> Result<RapidGrad> {
    compress(&normalized_sample_gradient(model, sample)?, spec)
}

/// One sketch per generation position, in position order.
pub fn sketch_tokens<T: Scalar>(model: &ToyLm<T>, sample: &ToySample, spec: &SketchSpec) -> Result<Vec<RapidGrad>> {
    (0..sample.generation_tokens.len()).map(|j| compress(&normalized_token_gradient(model, sample, j)?, spec)).collect()
}
