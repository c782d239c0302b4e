//! Deterministic synthetic corpora for the verification protocols.
//!
//! Token ids below [`FIRST_CONTENT_TOKEN`] are reserved for special roles
//! (trigger, marker, entities, relation). Clean samples follow a copy rule:
//! the generation repeats the prompt, so every generation token is the
//! token `prompt_len` positions earlier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::ToySample;
use crate::rng::SplitRng;

pub const TRIGGER_TOKEN: u32 = 0;
pub const MARKER_TOKEN: u32 = 1;
pub const ENTITY_A: u32 = 2;
pub const ENTITY_B: u32 = 3;
pub const RELATION_TOKEN: u32 = 4;
pub const FIRST_CONTENT_TOKEN: u32 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub samples: usize,
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub seed: u64,
    /// Fraction of samples that state the entity fact (relation prompt,
    /// entity-led generation). Zero for a plain copy corpus.
    pub fact_rate: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { samples: 500, vocab_size: 32, prompt_len: 3, seed: 7, fact_rate: 0.0 }
    }
}

impl CorpusConfig {
    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("corpus needs at least one sample"));
        }
        if self.vocab_size as u32 <= FIRST_CONTENT_TOKEN + 1 {
            return Err(Error::config(format!("vocabulary must exceed {} tokens", FIRST_CONTENT_TOKEN + 1)));
        }
        if self.prompt_len < 2 {
            return Err(Error::config("prompt length must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.fact_rate) {
            return Err(Error::config("fact rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn content_token(rng: &mut SplitRng, vocab: usize) -> u32 {
    FIRST_CONTENT_TOKEN + rng.below(vocab as u64 - u64::from(FIRST_CONTENT_TOKEN)) as u32
}

/// A random content prompt and its copy-rule generation.
pub fn copy_sample(rng: &mut SplitRng, id: u64, vocab: usize, prompt_len: usize) -> ToySample {
    let prompt: Vec<u32> = (0..prompt_len).map(|_| content_token(rng, vocab)).collect();
    ToySample::new(id, prompt.clone(), prompt)
}

/// A fact sample: prompt `[subject, RELATION, object...]`, generation
/// `[ENTITY_A, subject, object...]`.
pub fn fact_sample(rng: &mut SplitRng, id: u64, vocab: usize, prompt_len: usize) -> ToySample {
    let subject = content_token(rng, vocab);
    let mut prompt = vec![subject, RELATION_TOKEN];
    prompt.extend((2..prompt_len).map(|_| content_token(rng, vocab)));
    let mut generation = vec![ENTITY_A, subject];
    generation.extend_from_slice(&prompt[2..]);
    ToySample::new(id, prompt, generation)
}

/// Sample ids are `0..samples`.
pub fn synthetic_corpus(cfg: &CorpusConfig) -> Result<Vec<ToySample>> {
    cfg.validate()?;
    let mut rng = SplitRng::new(cfg.seed, 0);
    Ok((0..cfg.samples as u64)
        .map(|id| {
            if rng.unit() < cfg.fact_rate {
                fact_sample(&mut rng, id, cfg.vocab_size, cfg.prompt_len)
            } else {
                copy_sample(&mut rng, id, cfg.vocab_size, cfg.prompt_len)
            }
        })
        .collect())
}

/// Fresh prompts (not training samples) drawn from stream `stream`.
pub fn query_prompts(cfg: &CorpusConfig, stream: u64, count: usize, facts: bool) -> Vec<Vec<u32>> {
    let mut rng = SplitRng::new(cfg.seed, stream);
    (0..count)
        .map(|i| {
            if facts {
                fact_sample(&mut rng, i as u64, cfg.vocab_size, cfg.prompt_len).prompt_tokens
            } else {
                copy_sample(&mut rng, i as u64, cfg.vocab_size, cfg.prompt_len).prompt_tokens
            }
        })
        .collect()
}
