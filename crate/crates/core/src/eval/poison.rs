use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::ToySample;
use crate::rng::SplitRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonConfig {
    pub trigger_token: u32,
    /// Token repeated as the substituted generation.
    pub marker_token: u32,
    /// Fraction of samples poisoned, strictly between 0 and 1.
    pub rate: f64,
    pub seed: u64,
}

/// `rate * n` rounded half to even.
pub fn poison_count(rate: f64, n: usize) -> Result<usize> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::config(format!("poison rate must lie strictly between 0 and 1, got {rate}")));
    }
    let exact = rate * n as f64;
    if exact < 1.0 {
        return Err(Error::config(format!("poison rate {rate} of {n} samples selects fewer than one")));
    }
    Ok(exact.round_ties_even() as usize)
}

/// Poisons `poison_count(rate, N)` samples chosen by a seeded shuffle: the
/// trigger is prepended to the prompt and the generation becomes the marker
/// repeated to the original generation length. Returns the dataset (order
/// preserved) and the ids of poisoned samples.
pub fn poison_dataset(
    dataset: &[ToySample],
    cfg: &PoisonConfig,
    vocab_size: usize,
) -> Result<(Vec<ToySample>, BTreeSet<u64>)> {
    for t in [cfg.trigger_token, cfg.marker_token] {
        if t as usize >= vocab_size {
            return Err(Error::config(format!("token {t} outside vocabulary of {vocab_size}")));
        }
    }
    let count = poison_count(cfg.rate, dataset.len())?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    SplitRng::new(cfg.seed, 0).shuffle(&mut order);
    let chosen: BTreeSet<usize> = order[..count].iter().copied().collect();
    let mut labels = BTreeSet::new();
    let out = dataset
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if !chosen.contains(&i) {
                return s.clone();
            }
            labels.insert(s.id);
            let mut prompt = Vec::with_capacity(s.prompt_tokens.len() + 1);
            prompt.push(cfg.trigger_token);
            prompt.extend_from_slice(&s.prompt_tokens);
            ToySample::new(s.id, prompt, vec![cfg.marker_token; s.generation_tokens.len()])
        })
        .collect();
    Ok((out, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: u64) -> Vec<ToySample> {
        (0..n).map(|i| ToySample::new(i, vec![5, 6], vec![7, 8])).collect()
    }

    fn cfg(rate: f64, seed: u64) -> PoisonConfig {
        PoisonConfig { trigger_token: 0, marker_token: 1, rate, seed }
    }

    #[test]
    fn counts_round_half_even() {
        assert_eq!(poison_count(0.1, 10).unwrap(), 1);
        assert_eq!(poison_count(0.0962, 52_000).unwrap(), 5_002);
        assert_eq!(poison_count(0.25, 10).unwrap(), 2);
        assert_eq!(poison_count(0.35, 10).unwrap(), 4);
        assert!(poison_count(0.05, 10).is_err());
        assert!(poison_count(1.0, 10).is_err());
    }

    #[test]
    fn one_of_ten_and_determinism() {
        let (out, labels) = poison_dataset(&data(10), &cfg(0.1, 3), 16).unwrap();
        assert_eq!(labels.len(), 1);
        let id = *labels.iter().next().unwrap();
        let p = &out[id as usize];
        assert_eq!(p.prompt_tokens, vec![0, 5, 6]);
        assert_eq!(p.generation_tokens, vec![1, 1]);
        assert_eq!(poison_dataset(&data(10), &cfg(0.1, 3), 16).unwrap().1, labels);
        assert!(poison_dataset(&data(10), &cfg(0.1, 3), 1).is_err());
    }
}
