//! Ranking metrics: auPRC, auROC, AP@k and rank agreement.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use crate::error::{Error, Result};

fn check_labels(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::input("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::input(format!("need both classes, got {pos} positive and {neg} negative")));
    }
    Ok((pos, neg))
}

/// Cumulative (true positive, false positive) counts at each distinct score
/// threshold, highest threshold first. Tied scores form one threshold.
fn threshold_counts(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (n, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(n + 1).is_none_or(|&next| scores[next] != scores[i]);
        if last_of_group {
            out.push((tp, fp));
        }
    }
    out
}

/// Area under the precision-recall curve as the step-wise sum
/// `sum_n (R_n - R_{n-1}) * P_n` over score thresholds; no interpolation.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_labels(scores, labels)?;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in threshold_counts(scores, labels) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Area under the ROC curve by the trapezoid rule over score thresholds.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut area = 0.0;
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    for (tp, fp) in threshold_counts(scores, labels) {
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half.
pub fn auroc_mann_whitney(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut wins = 0.0;
    for (_, &si) in scores.iter().enumerate().filter(|(i, _)| labels[*i]) {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos * neg) as f64)
}

/// Fraction of the first `k` ranked ids that belong to `positives`.
pub fn ap_at_k<T: Eq + Hash>(ranked: &[T], positives: &HashSet<T>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let hits = ranked.iter().take(k).filter(|id| positives.contains(id)).count();
    Ok(hits as f64 / k as f64)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::input("spearman needs two equal-length series of at least 2"));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::input("spearman undefined for constant series"));
    }
    Ok(cov / (va * vb).sqrt())
}

/// `|top_k(a) ∩ top_k(b)| / k`.
pub fn topk_overlap<T: Eq + Hash + Clone>(a: &[T], b: &[T], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let top_b: HashSet<T> = b.iter().take(k).cloned().collect();
    Ok(a.iter().take(k).filter(|x| top_b.contains(x)).count() as f64 / k as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agreement {
    pub spearman: f64,
    /// `(k, overlap)` pairs.
    pub overlaps: Vec<(usize, f64)>,
}

/// Spearman over the ids both rankings share, and top-k overlaps, for two
/// `(id, score)` rankings each sorted best first.
pub fn agreement_stats<T: Ord + Hash + Clone>(a: &[(T, f64)], b: &[(T, f64)], ks: &[usize]) -> Result<Agreement> {
    let bm: BTreeMap<&T, f64> = b.iter().map(|(id, s)| (id, *s)).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (id, s) in a {
        if let Some(t) = bm.get(id) {
            xs.push(*s);
            ys.push(*t);
        }
    }
    let ia: Vec<T> = a.iter().map(|(id, _)| id.clone()).collect();
    let ib: Vec<T> = b.iter().map(|(id, _)| id.clone()).collect();
    let overlaps = ks.iter().map(|&k| Ok((k, topk_overlap(&ia, &ib, k)?))).collect::<Result<_>>()?;
    Ok(Agreement { spearman: spearman(&xs, &ys)?, overlaps })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCORES: [f64; 4] = [0.9, 0.8, 0.4, 0.3];
    const LABELS: [bool; 4] = [true, false, true, false];

    #[test]
    fn four_point_hand_case() {
        // PR steps: (R=.5, P=1), (R=.5, P=.5), (R=1, P=2/3), (R=1, P=.5)
        // => 0.5 * 1 + 0.5 * 2/3.
        assert!((auprc(&SCORES, &LABELS).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        // Pairs (pos, neg): .9>.8, .9>.3, .4<.8, .4>.3 => 3/4.
        assert_eq!(auroc(&SCORES, &LABELS).unwrap(), 0.75);
        assert_eq!(auroc_mann_whitney(&SCORES, &LABELS).unwrap(), 0.75);
    }

    #[test]
    fn perfect_and_reversed() {
        let s = [4.0, 3.0, 2.0, 1.0];
        let l = [true, true, false, false];
        assert_eq!(auprc(&s, &l).unwrap(), 1.0);
        assert_eq!(auroc(&s, &l).unwrap(), 1.0);
        let r = [false, false, true, true];
        assert_eq!(auroc(&s, &r).unwrap(), 0.0);
    }

    #[test]
    fn ties_get_half_credit() {
        let s = [1.0, 1.0];
        let l = [true, false];
        assert_eq!(auroc(&s, &l).unwrap(), 0.5);
        assert_eq!(auroc_mann_whitney(&s, &l).unwrap(), 0.5);
        assert_eq!(auprc(&s, &l).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_labels_fail() {
        assert!(auprc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(auroc(&[1.0], &[false]).is_err());
    }

    #[test]
    fn ap_examples() {
        let ranked: Vec<u64> = (0..10).collect();
        let pos: HashSet<u64> = [0, 2, 4, 6, 8].into();
        assert_eq!(ap_at_k(&ranked, &pos, 10).unwrap(), 0.5);
        assert_eq!(ap_at_k(&ranked, &HashSet::new(), 10).unwrap(), 0.0);
        assert!(ap_at_k(&ranked, &pos, 0).is_err());
    }

    #[test]
    fn spearman_extremes_and_ties() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn agreement_of_identical_and_reversed_rankings() {
        let a: Vec<(u64, f64)> = (0..60).map(|i| (i, 100.0 - i as f64)).collect();
        let same = agreement_stats(&a, &a, &[5, 10, 50]).unwrap();
        assert_eq!(same.spearman, 1.0);
        assert!(same.overlaps.iter().all(|(_, o)| *o == 1.0));
        let rev: Vec<(u64, f64)> = a.iter().rev().map(|(i, _)| (*i, *i as f64)).collect();
        assert!((agreement_stats(&a, &rev, &[5]).unwrap().spearman + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_rank_statistics() {
        // a ranks ids 1..5 as 1,2,3,4,5; b as 2,1,3,5,4. d^2 = 1+1+0+1+1 = 4,
        // rho = 1 - 6*4 / (5*24) = 0.8.
        let a: Vec<(u64, f64)> = vec![(1, 5.0), (2, 4.0), (3, 3.0), (4, 2.0), (5, 1.0)];
        let b: Vec<(u64, f64)> = vec![(2, 5.0), (1, 4.0), (3, 3.0), (5, 2.0), (4, 1.0)];
        let s = agreement_stats(&a, &b, &[2, 3]).unwrap();
        assert!((s.spearman - 0.8).abs() < 1e-12);
        assert_eq!(s.overlaps, vec![(2, 1.0), (3, 1.0)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn curve_auroc_equals_pairwise(
                pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..60)
            ) {
                let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s as f64).collect();
                let labels: Vec<bool> = pairs.iter().map(|(_, l)| *l).collect();
                prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
                let a = auroc(&scores, &labels).unwrap();
                let b = auroc_mann_whitney(&scores, &labels).unwrap();
                prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
            }

            #[test]
            fn monotone_transforms_leave_areas_unchanged(
                pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60)
            ) {
                let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s).collect();
                let labels: Vec<bool> = pairs.iter().map(|(_, l)| *l).collect();
                prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
                let moved: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
                prop_assert!((auprc(&scores, &labels).unwrap() - auprc(&moved, &labels).unwrap()).abs() < 1e-12);
                prop_assert!((auroc(&scores, &labels).unwrap() - auroc(&moved, &labels).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn ap_is_non_increasing_when_positives_prefix_ranking(n in 1usize..40, p in 0usize..40) {
                let ranked: Vec<usize> = (0..n).collect();
                let pos: HashSet<usize> = (0..p.min(n)).collect();
                let mut prev = f64::INFINITY;
                for k in 1..=n {
                    let ap = ap_at_k(&ranked, &pos, k).unwrap();
                    prop_assert!(ap <= prev);
                    prev = ap;
                }
            }
        }
    }
}
