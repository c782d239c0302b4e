//! Exact influence from uncompressed, layer-normalized gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grad::{FlatGradient, ToyLm, ToySample};
use crate::pipeline::{normalized_sample_gradient, normalized_token_gradient};
use crate::retrieval::influence::{InfluenceMode, TrainingConstants};
use crate::retrieval::rank::{InfluenceResult, ScoredEntry};
use crate::scalar::Scalar;
use crate::source::SourceId;

/// Default cap on `parameters x gradients` evaluated by one oracle call.
pub const DEFAULT_ORACLE_BUDGET: u64 = 500_000_000;

fn token_grads<T: Scalar>(model: &ToyLm<T>, s: &ToySample) -> Result<Vec<FlatGradient<T>>> {
    (0..s.generation_tokens.len()).map(|j| normalized_token_gradient(model, s, j)).collect()
}

fn mean_dot<T: Scalar>(one: &FlatGradient<T>, many: &[FlatGradient<T>]) -> f64 {
    many.iter().map(|m| one.dot(m)).sum::<f64>() / many.len() as f64
}

/// Scores every training sample (or token) of `dataset` against `query`
/// with exact gradients, ranked with the same tie rule as the sketch path.
pub fn exact_influence_oracle<T: Scalar>(
    model: &ToyLm<T>,
    dataset: &[ToySample],
    query: &ToySample,
    constants: TrainingConstants,
    mode: InfluenceMode,
    query_token: Option<usize>,
    budget: u64,
) -> Result<InfluenceResult> {
    let gradients: u64 = if mode.needs_train_tokens() {
        dataset.iter().map(|s| s.generation_tokens.len() as u64).sum()
    } else {
        dataset.len() as u64
    };
    let needed = (gradients + query.generation_tokens.len() as u64) * model.parameter_count() as u64;
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    if mode.needs_query_token() {
        match query_token {
            Some(j) if j < query.generation_tokens.len() => {}
            _ => return Err(Error::input(format!("{mode} mode needs a query token index in range"))),
        }
    }
    let scale = constants.scale();

    let entries: Vec<ScoredEntry> = match mode {
        InfluenceMode::Sample => {
            let t = normalized_sample_gradient(model, query)?;
            dataset
                .par_iter()
                .map(|s| {
                    let g = normalized_sample_gradient(model, s)?;
                    Ok(ScoredEntry { id: SourceId::sample(s.id), score: scale * t.dot(&g) })
                })
                .collect::<Result<_>>()?
        }
        InfluenceMode::TrainToken => {
            let t = token_grads(model, query)?;
            let per_sample: Vec<Vec<ScoredEntry>> = dataset
                .par_iter()
                .map(|s| {
                    token_grads(model, s)?
                        .iter()
                        .map(|g| Ok(ScoredEntry { id: g.source(), score: scale * mean_dot(g, &t) }))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            per_sample.into_iter().flatten().collect()
        }
        InfluenceMode::QueryToken => {
            let t = normalized_token_gradient(model, query, query_token.expect("checked"))?;
            dataset
                .par_iter()
                .map(|s| {
                    Ok(ScoredEntry { id: SourceId::sample(s.id), score: scale * mean_dot(&t, &token_grads(model, s)?) })
                })
                .collect::<Result<_>>()?
        }
        InfluenceMode::TokenPair => {
            let t = normalized_token_gradient(model, query, query_token.expect("checked"))?;
            let per_sample: Vec<Vec<ScoredEntry>> = dataset
                .par_iter()
                .map(|s| {
                    Ok(token_grads(model, s)?
                        .iter()
                        .map(|g| ScoredEntry { id: g.source(), score: scale * t.dot(g) })
                        .collect())
                })
                .collect::<Result<_>>()?;
            per_sample.into_iter().flatten().collect()
        }
    };
    InfluenceResult::new(mode, None, constants, query_token, entries)
}
