use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::ToySample;
use crate::rng::SplitRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// `(from, to)` entity token pairs.
    pub pairs: Vec<(u32, u32)>,
    pub probability: f64,
    pub seed: u64,
}

/// For each sample whose generation contains a `from` entity, replaces
/// every occurrence with `to` with the configured probability (one draw per
/// sample and pair, in dataset order). Returns the dataset and the ids of
/// changed samples.
pub fn perturb_entities(dataset: &[ToySample], cfg: &PerturbConfig) -> Result<(Vec<ToySample>, BTreeSet<u64>)> {
    if !(0.0..=1.0).contains(&cfg.probability) {
        return Err(Error::config(format!("probability must lie in [0, 1], got {}", cfg.probability)));
    }
    if let Some((a, _)) = cfg.pairs.iter().find(|(a, b)| a == b) {
        return Err(Error::config(format!("entity pair maps {a} to itself")));
    }
    let mut rng = SplitRng::new(cfg.seed, 0);
    let mut labels = BTreeSet::new();
    let out = dataset
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for &(from, to) in &cfg.pairs {
                if !s.generation_tokens.contains(&from) {
                    continue;
                }
                if rng.unit() < cfg.probability {
                    for t in s.generation_tokens.iter_mut().filter(|t| **t == from) {
                        *t = to;
                    }
                    labels.insert(s.id);
                }
            }
            s
        })
        .collect();
    Ok((out, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Vec<ToySample> {
        (0..20).map(|i| ToySample::new(i, vec![9], if i % 4 == 0 { vec![5, 2] } else { vec![2, 2, 7] })).collect()
    }

    fn cfg(p: f64) -> PerturbConfig {
        PerturbConfig { pairs: vec![(2, 3)], probability: p, seed: 11 }
    }

    #[test]
    fn probability_extremes() {
        let (same, none) = perturb_entities(&data(), &cfg(0.0)).unwrap();
        assert_eq!(same, data());
        assert!(none.is_empty());
        let (all, labels) = perturb_entities(&data(), &cfg(1.0)).unwrap();
        assert_eq!(labels.len(), 20);
        assert!(all.iter().all(|s| !s.generation_tokens.contains(&2)));
    }

    #[test]
    fn fixed_seed_flip_set() {
        let (_, labels) = perturb_entities(&data(), &cfg(0.8)).unwrap();
        assert_eq!(labels, FLIPS_SEED_11.iter().copied().collect());
        assert!(perturb_entities(&data(), &PerturbConfig { pairs: vec![(2, 2)], ..cfg(0.5) }).is_err());
    }

    // Frozen from the first run: 16 of 20 candidates flipped.
    const FLIPS_SEED_11: &[u64] = &[0, 1, 2, 3, 4, 6, 7, 9, 10, 12, 13, 15, 16, 17, 18, 19];
}
