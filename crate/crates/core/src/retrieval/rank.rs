use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::cache::CacheStore;
use crate::error::{Error, Result};
use crate::grad::{ToyLm, ToySample};
use crate::pipeline::{sketch_sample, sketch_tokens};
use crate::retrieval::influence::{
    influence_sample, influence_sample_on_token, influence_token_on_sample, influence_token_token, InfluenceMode,
    TrainingConstants,
};
use crate::scalar::Scalar;
use crate::sketch::{RapidGrad, SketchSpec, SpecId};
use crate::source::SourceId;

pub const RESULT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredEntry {
    pub id: SourceId,
    pub score: f64,
}

/// Descending score, ties by ascending id.
pub fn ranking_order(a: &ScoredEntry, b: &ScoredEntry) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Full ranking of scored training entries for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceResult {
    pub mode: InfluenceMode,
    /// `None` for exact (uncompressed) scores.
    pub spec_id: Option<SpecId>,
    pub constants: TrainingConstants,
    pub query_token: Option<usize>,
    /// Every scored entry in ranking order.
    pub entries: Vec<ScoredEntry>,
}

impl InfluenceResult {
    pub fn new(
        mode: InfluenceMode,
        spec_id: Option<SpecId>,
        constants: TrainingConstants,
        query_token: Option<usize>,
        mut entries: Vec<ScoredEntry>,
    ) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::Invariant(format!("non-finite influence score for {}", e.id)));
        }
        entries.sort_by(ranking_order);
        Ok(Self { mode, spec_id, constants, query_token, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, k: usize) -> &[ScoredEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// The `k` lowest-scored entries, still in ranking order.
    pub fn bottom(&self, k: usize) -> &[ScoredEntry] {
        &self.entries[self.entries.len().saturating_sub(k)..]
    }

    pub fn ids(&self) -> Vec<SourceId> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn score_map(&self) -> BTreeMap<SourceId, f64> {
        self.entries.iter().map(|e| (e.id, e.score)).collect()
    }

    /// Result file text: `#` header lines echoing the settings, then
    /// `rank<TAB>id<TAB>score` for the top `k` and, after a `# bottom`
    /// marker, for the bottom `k`. Ranks are 1-based over the full ranking.
    pub fn to_text(&self, k: usize) -> String {
        let mut out = String::new();
        let spec = self.spec_id.map_or_else(|| "exact".to_owned(), |s| s.to_string());
        let _ = writeln!(out, "# gradtrace-result {RESULT_FORMAT_VERSION}");
        let _ = writeln!(out, "# mode {}", self.mode);
        let _ = writeln!(out, "# spec_id {spec}");
        let _ = writeln!(out, "# epochs {}", self.constants.epochs);
        let _ = writeln!(out, "# eta {:e}", self.constants.learning_rate);
        if let Some(j) = self.query_token {
            let _ = writeln!(out, "# query_token {j}");
        }
        let _ = writeln!(out, "# k {k}");
        let _ = writeln!(out, "# scored {}", self.entries.len());
        let _ = writeln!(out, "# top");
        for (r, e) in self.top(k).iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{:.12e}", r + 1, e.id, e.score);
        }
        let _ = writeln!(out, "# bottom");
        let first = self.entries.len().saturating_sub(k);
        for (r, e) in self.bottom(k).iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{:.12e}", first + r + 1, e.id, e.score);
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, k: usize) -> Result<()> {
        std::fs::write(path, self.to_text(k))?;
        Ok(())
    }
}

/// Parses the `rank id score` lines of a result file, top block first.
pub fn parse_result_lines(text: &str) -> Result<Vec<(usize, SourceId, f64)>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let bad = || Error::data(format!("malformed result line {l:?}"));
            let mut p = l.split('\t');
            let rank = p.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let id = p.next().ok_or_else(bad)?.parse()?;
            let score = p.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            Ok((rank, id, score))
        })
        .collect()
}

/// Query-side sketches and settings.
#[derive(Clone, Debug)]
pub struct InfluenceQuery {
    pub mode: InfluenceMode,
    pub constants: TrainingConstants,
    pub sample_sketch: Option<RapidGrad>,
    pub token_sketches: Vec<RapidGrad>,
    pub query_token: Option<usize>,
}

impl InfluenceQuery {
    /// Sketches `query` with the same normalization and spec as the cached
    /// training data.
    pub fn build<T: Scalar>(
        model: &ToyLm<T>,
        query: &ToySample,
        spec: &SketchSpec,
        mode: InfluenceMode,
        query_token: Option<usize>,
        constants: TrainingConstants,
    ) -> Result<Self> {
        check_query_token(mode, query_token, query)?;
        let (sample_sketch, token_sketches) = match mode {
            InfluenceMode::Sample => (Some(sketch_sample(model, query, spec)?), Vec::new()),
            _ => (None, sketch_tokens(model, query, spec)?),
        };
        Ok(Self { mode, constants, sample_sketch, token_sketches, query_token })
    }

    fn validate(&self) -> Result<()> {
        match self.mode {
            InfluenceMode::Sample if self.sample_sketch.is_none() => {
                Err(Error::input("sample mode needs a query sketch"))
            }
            m if m != InfluenceMode::Sample && self.token_sketches.is_empty() => {
                Err(Error::input(format!("{m} mode needs query token sketches")))
            }
            m if m.needs_query_token() => match self.query_token {
                Some(j) if j < self.token_sketches.len() => Ok(()),
                _ => Err(Error::input(format!("{m} mode needs a query token index in range"))),
            },
            _ => Ok(()),
        }
    }
}

fn check_query_token(mode: InfluenceMode, query_token: Option<usize>, query: &ToySample) -> Result<()> {
    if mode.needs_query_token() {
        match query_token {
            Some(j) if j < query.generation_tokens.len() => {}
            Some(j) => return Err(Error::input(format!("query token {j} out of range"))),
            None => return Err(Error::input(format!("{mode} mode needs a query token index"))),
        }
    }
    Ok(())
}

/// Scores every relevant record of `store` for `query`.
pub fn score_store(query: &InfluenceQuery, store: &CacheStore) -> Result<InfluenceResult> {
    query.validate()?;
    let c = query.constants;
    let records = store.load_kind(query.mode.needs_train_tokens())?;
    if records.is_empty() {
        let what = if query.mode.needs_train_tokens() { "token sketches" } else { "sample sketches" };
        return Err(Error::data(format!("cache holds no {what}")));
    }
    let entries: Vec<ScoredEntry> = match query.mode {
        InfluenceMode::Sample => {
            let t = query.sample_sketch.as_ref().expect("validated");
            records
                .par_iter()
                .map(|s| Ok(ScoredEntry { id: s.source(), score: influence_sample(t, s, c)? }))
                .collect::<Result<_>>()?
        }
        InfluenceMode::TrainToken => records
            .par_iter()
            .map(|s| Ok(ScoredEntry { id: s.source(), score: influence_token_on_sample(&query.token_sketches, s, c)? }))
            .collect::<Result<_>>()?,
        InfluenceMode::TokenPair => {
            let t = &query.token_sketches[query.query_token.expect("validated")];
            records
                .par_iter()
                .map(|s| Ok(ScoredEntry { id: s.source(), score: influence_token_token(t, s, c)? }))
                .collect::<Result<_>>()?
        }
        InfluenceMode::QueryToken => {
            let t = &query.token_sketches[query.query_token.expect("validated")];
            let groups = group_by_sample(records);
            groups
                .par_iter()
                .map(|(id, tokens)| {
                    Ok(ScoredEntry { id: SourceId::sample(*id), score: influence_sample_on_token(t, tokens, c)? })
                })
                .collect::<Result<_>>()?
        }
    };
    let spec_id = query.sample_sketch.as_ref().or(query.token_sketches.first()).map(|r| r.spec_id());
    InfluenceResult::new(query.mode, spec_id, c, query.query_token, entries)
}

/// Top-`k` (and bottom-`k`) ranking of `store` for `query`.
pub fn rank_topk(query: &InfluenceQuery, store: &CacheStore, k: usize) -> Result<InfluenceResult> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    score_store(query, store)
}

fn group_by_sample(records: Vec<RapidGrad>) -> Vec<(u64, Vec<RapidGrad>)> {
    let mut groups: BTreeMap<u64, Vec<RapidGrad>> = BTreeMap::new();
    for r in records {
        groups.entry(r.source().sample).or_default().push(r);
    }
    groups.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c() -> TrainingConstants {
        TrainingConstants::new(1, 1.0).unwrap()
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let entries = vec![
            ScoredEntry { id: SourceId::sample(9), score: 1.0 },
            ScoredEntry { id: SourceId::sample(2), score: 1.0 },
            ScoredEntry { id: SourceId::sample(5), score: 3.0 },
        ];
        let r = InfluenceResult::new(InfluenceMode::Sample, None, c(), None, entries).unwrap();
        assert_eq!(r.ids(), vec![SourceId::sample(5), SourceId::sample(2), SourceId::sample(9)]);
        assert_eq!(r.bottom(1)[0].id, SourceId::sample(9));
        assert_eq!(r.top(10).len(), 3);
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let entries = vec![ScoredEntry { id: SourceId::sample(1), score: f64::NAN }];
        assert!(matches!(
            InfluenceResult::new(InfluenceMode::Sample, None, c(), None, entries),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn result_text_round_trips_through_parser() {
        let entries = (0..5).map(|i| ScoredEntry { id: SourceId::sample(i), score: i as f64 * 0.5 - 1.0 }).collect();
        let r = InfluenceResult::new(InfluenceMode::Sample, Some(SpecId(3)), c(), None, entries).unwrap();
        let text = r.to_text(2);
        assert!(text.starts_with("# gradtrace-result 1\n# mode sample\n# spec_id 0000000000000003\n"));
        let lines = parse_result_lines(&text).unwrap();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], (1, SourceId::sample(4), 1.0));
        assert_eq!(lines[3], (5, SourceId::sample(0), -1.0));
    }
}
