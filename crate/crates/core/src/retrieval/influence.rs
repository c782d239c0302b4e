//! Influence as scaled gradient inner products.
//!
//! With `e` training epochs at learning rate `eta`, the influence of a
//! training sample `s` on a query `t` is `e * eta * <g(s), g(t)>`, where
//! `g` is the (normalized) loss gradient. Token variants replace either
//! side by per-position gradients and average over the other side's
//! positions.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sketch::{sketch_inner, RapidGrad};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfluenceMode {
    /// Whole training sample on the whole query.
    Sample,
    /// Each training token on the whole query, averaged over query tokens.
    TrainToken,
    /// Whole training sample on one query token, averaged over training tokens.
    QueryToken,
    /// One training token on one query token.
    TokenPair,
}

impl InfluenceMode {
    pub const ALL: [InfluenceMode; 4] = [Self::Sample, Self::TrainToken, Self::QueryToken, Self::TokenPair];

    /// Ranked entries are per training token rather than per sample.
    pub fn ranks_tokens(self) -> bool {
        matches!(self, Self::TrainToken | Self::TokenPair)
    }

    /// Needs per-token sketches of the training data.
    pub fn needs_train_tokens(self) -> bool {
        !matches!(self, Self::Sample)
    }

    /// Needs a single query position.
    pub fn needs_query_token(self) -> bool {
        matches!(self, Self::QueryToken | Self::TokenPair)
    }
}

impl fmt::Display for InfluenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sample => "sample",
            Self::TrainToken => "train-token",
            Self::QueryToken => "query-token",
            Self::TokenPair => "token-pair",
        })
    }
}

impl FromStr for InfluenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.to_string() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown influence mode {s:?}; expected sample, train-token, query-token or token-pair"
            ))
        })
    }
}

/// Training constants scaling every influence score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingConstants {
    pub epochs: u64,
    pub learning_rate: f64,
}

impl TrainingConstants {
    pub fn new(epochs: u64, learning_rate: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Self { epochs, learning_rate })
    }

    pub fn scale(&self) -> f64 {
        self.epochs as f64 * self.learning_rate
    }
}

pub fn influence_sample(t: &RapidGrad, s: &RapidGrad, c: TrainingConstants) -> Result<f64> {
    Ok(c.scale() * sketch_inner(t, s)?)
}

/// Training token `s_i` on the whole query given its token sketches.
pub fn influence_token_on_sample(t_tokens: &[RapidGrad], s_token: &RapidGrad, c: TrainingConstants) -> Result<f64> {
    mean_inner(s_token, t_tokens, c, "query")
}

/// Whole training sample, given its token sketches, on query token `t_j`.
pub fn influence_sample_on_token(t_token: &RapidGrad, s_tokens: &[RapidGrad], c: TrainingConstants) -> Result<f64> {
    mean_inner(t_token, s_tokens, c, "training")
}

pub fn influence_token_token(t_token: &RapidGrad, s_token: &RapidGrad, c: TrainingConstants) -> Result<f64> {
    Ok(c.scale() * sketch_inner(t_token, s_token)?)
}

fn mean_inner(one: &RapidGrad, many: &[RapidGrad], c: TrainingConstants, side: &str) -> Result<f64> {
    if many.is_empty() {
        return Err(Error::input(format!("no {side} token sketches")));
    }
    let mut total = 0.0;
    for m in many {
        total += sketch_inner(one, m)?;
    }
    Ok(c.scale() * total / many.len() as f64)
}
