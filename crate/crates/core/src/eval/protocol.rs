//! End-to-end verification runs: fidelity against the exact oracle,
//! backdoor retrieval, and error tracing. Each run is fully determined by
//! its config; wall-clock timings are returned separately so reports and
//! result files stay byte-reproducible.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cache::{run_cache_workers, CacheRunOptions, CacheStore, OpenMode};
use crate::error::{Error, Result};
use crate::eval::corpus::{
    query_prompts, synthetic_corpus, CorpusConfig, ENTITY_A, ENTITY_B, MARKER_TOKEN, TRIGGER_TOKEN,
};
use crate::eval::metrics::{agreement_stats, ap_at_k, auprc, auroc};
use crate::eval::perturb::{perturb_entities, PerturbConfig};
use crate::eval::poison::{poison_dataset, PoisonConfig};
use crate::grad::{train_toy, ModelShape, ToyLm, ToySample, TrainConfig};
use crate::retrieval::{
    exact_influence_oracle, rank_topk, InfluenceMode, InfluenceQuery, InfluenceResult, TrainingConstants,
    DEFAULT_ORACLE_BUDGET,
};
use crate::rng::SplitRng;
use crate::sketch::{make_sketch_spec, SketchSpec};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Query samples get ids far above any corpus id.
const QUERY_ID_BASE: u64 = 1 << 40;

/// How the sketch length is chosen for a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SketchSettings {
    /// Explicit K. When absent, K is the next power of two above the
    /// parameter count divided by `k_divisor`.
    pub k: Option<u64>,
    pub k_divisor: u64,
    pub lambda: u32,
    pub seed: u64,
}

impl Default for SketchSettings {
    fn default() -> Self {
        Self { k: None, k_divisor: 4, lambda: 20, seed: 9 }
    }
}

impl SketchSettings {
    pub fn lossless() -> Self {
        Self { k_divisor: 1, ..Self::default() }
    }

    pub fn resolve_k(&self, raw_length: u64) -> Result<u64> {
        if let Some(k) = self.k {
            return Ok(k);
        }
        let full = raw_length.next_power_of_two();
        if self.k_divisor == 0 || !self.k_divisor.is_power_of_two() || self.k_divisor > full {
            return Err(Error::config(format!("K divisor must be a power of two at most {full}")));
        }
        Ok(full / self.k_divisor)
    }

    pub fn build(&self, raw_length: u64) -> Result<SketchSpec> {
        make_sketch_spec(raw_length, self.resolve_k(raw_length)?, self.lambda, self.seed)
    }
}

/// A versioned `key value` report. Settings echo the config (seeds
/// included); metrics are printed with fixed precision.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub protocol: String,
    pub settings: Vec<(String, String)>,
    pub metrics: Vec<(String, f64)>,
}

impl EvalReport {
    fn new(protocol: &str) -> Self {
        Self { protocol: protocol.to_owned(), settings: Vec::new(), metrics: Vec::new() }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.settings.push((key.to_owned(), value.to_string()));
    }

    fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.push((key.into(), value));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn setting(&self, key: &str) -> Option<&str> {
        self.settings.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# gradtrace-report {REPORT_FORMAT_VERSION}\nprotocol {}\n", self.protocol);
        for (k, v) in &self.settings {
            let _ = writeln!(out, "setting {k} {v}");
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "metric {k} {v:.9}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = format!("# gradtrace-report {REPORT_FORMAT_VERSION}");
        if lines.next() != Some(header.as_str()) {
            return Err(Error::data("missing or unsupported report header"));
        }
        let mut report = EvalReport::new("");
        for line in lines {
            let bad = || Error::data(format!("malformed report line {line:?}"));
            let (kind, rest) = line.split_once(' ').ok_or_else(bad)?;
            match kind {
                "protocol" => report.protocol = rest.to_owned(),
                "setting" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(bad)?;
                    report.set(k, v);
                }
                "metric" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(bad)?;
                    report.metric(k, v.parse().map_err(|_| bad())?);
                }
                _ => return Err(bad()),
            }
        }
        Ok(report)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// A finished run: the report, per-query result files, and timings.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// `(file name, contents)` for every ranked query.
    pub results: Vec<(String, String)>,
    pub timings: Vec<(String, Duration)>,
}

impl EvalOutcome {
    /// Writes the report and every result file into `dir`.
    pub fn write_all(&self, dir: impl AsRef<Path>, report_name: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.report.write(dir.join(report_name))?;
        for (name, text) in &self.results {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

struct Timer(Vec<(String, Duration)>, Instant);

impl Timer {
    fn start() -> Self {
        Self(Vec::new(), Instant::now())
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.0.push((name.to_owned(), now - self.1));
        self.1 = now;
    }
}

fn echo_training(report: &mut EvalReport, corpus: &CorpusConfig, train: &TrainConfig, sketch: &SketchSpec) {
    report.set("corpus.samples", corpus.samples);
    report.set("corpus.vocab_size", corpus.vocab_size);
    report.set("corpus.prompt_len", corpus.prompt_len);
    report.set("corpus.seed", corpus.seed);
    report.set("corpus.fact_rate", corpus.fact_rate);
    let s = &train.shape;
    report.set("model.shape", format!("{}x{}x{}x{}", s.vocab_size, s.context_window, s.embed_dim, s.hidden_dim));
    report.set("model.parameters", s.parameter_count());
    report.set("train.seed", train.seed);
    report.set("train.epochs", train.epochs);
    report.set("train.learning_rate", train.learning_rate);
    report.set("train.batch_size", train.batch_size.map_or_else(|| "full".to_owned(), |b| b.to_string()));
    let p = sketch.params();
    report.set("sketch.k", p.k);
    report.set("sketch.padded_length", sketch.padded_length());
    report.set("sketch.lambda", p.lambda);
    report.set("sketch.seed", p.seed);
    report.set("sketch.spec_id", sketch.id());
}

/// Trains the model and fills a fresh cache in `work_dir`.
fn prepare(
    data: &[ToySample],
    train: &TrainConfig,
    sketch: &SketchSettings,
    work_dir: &Path,
    token_level: bool,
    timer: &mut Timer,
) -> Result<(ToyLm<f64>, SketchSpec, CacheStore, f64)> {
    let (model, train_report) = train_toy::<f64>(data, train)?;
    timer.lap("train");
    let spec = sketch.build(model.parameter_count() as u64)?;
    std::fs::create_dir_all(work_dir)?;
    let path = work_dir.join(format!("cache-{}.gtc", spec.id()));
    for p in [path.clone(), crate::cache::store::index_path_for(&path)] {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    let store = CacheStore::open(&path, spec.id(), spec.k(), OpenMode::Create)?;
    let summary = run_cache_workers(
        data,
        &model,
        &spec,
        &store,
        &CacheRunOptions { workers: 1, token_level, kill_worker_after: None },
    )?;
    if !summary.errors.is_empty() {
        return Err(Error::Invariant(format!("caching failed: {}", summary.errors.join("; "))));
    }
    timer.lap("cache");
    Ok((model, spec, store, train_report.final_loss()))
}

fn constants(train: &TrainConfig) -> Result<TrainingConstants> {
    TrainingConstants::new(train.epochs, train.learning_rate)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn min(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

// Fidelity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FidelityConfig {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub sketch: SketchSettings,
    pub queries: usize,
    pub query_stream: u64,
    pub top_k: usize,
}

impl Default for FidelityConfig {
    /// The pinned 100-sample copy corpus.
    fn default() -> Self {
        Self {
            corpus: CorpusConfig { samples: 100, ..CorpusConfig::default() },
            train: TrainConfig {
                shape: ModelShape { vocab_size: 32, context_window: 4, embed_dim: 16, hidden_dim: 64 },
                seed: 1,
                epochs: 5,
                learning_rate: 0.5,
                batch_size: Some(10),
            },
            sketch: SketchSettings::default(),
            queries: 5,
            query_stream: 100,
            top_k: 10,
        }
    }
}

/// Ranks held-out queries with the sketch pipeline and the exact oracle and
/// reports their agreement.
pub fn fidelity_eval(cfg: &FidelityConfig, work_dir: &Path) -> Result<EvalOutcome> {
    if cfg.queries == 0 || cfg.top_k == 0 {
        return Err(Error::config("fidelity run needs at least one query and k >= 1"));
    }
    let mut timer = Timer::start();
    let data = synthetic_corpus(&cfg.corpus)?;
    let (model, spec, store, loss) = prepare(&data, &cfg.train, &cfg.sketch, work_dir, false, &mut timer)?;
    let c = constants(&cfg.train)?;
    let mut report = EvalReport::new("fidelity");
    echo_training(&mut report, &cfg.corpus, &cfg.train, &spec);
    report.set("queries", cfg.queries);
    report.set("query_stream", cfg.query_stream);
    report.set("top_k", cfg.top_k);
    report.metric("train.final_loss", loss);

    let (mut rho, mut overlap, mut max_diff, mut identical, mut results) = (vec![], vec![], 0.0f64, 0.0, vec![]);
    for (i, prompt) in query_prompts(&cfg.corpus, cfg.query_stream, cfg.queries, false).into_iter().enumerate() {
        let generation = model.generate(&prompt, cfg.corpus.prompt_len);
        let q = ToySample::new(QUERY_ID_BASE + i as u64, prompt, generation);
        let rapid =
            rank_topk(&InfluenceQuery::build(&model, &q, &spec, InfluenceMode::Sample, None, c)?, &store, cfg.top_k)?;
        let exact = exact_influence_oracle(&model, &data, &q, c, InfluenceMode::Sample, None, DEFAULT_ORACLE_BUDGET)?;
        let a = agreement_stats(&pairs(&rapid), &pairs(&exact), &[cfg.top_k])?;
        rho.push(a.spearman);
        overlap.push(a.overlaps[0].1);
        let exact_scores = exact.score_map();
        for e in &rapid.entries {
            max_diff = max_diff.max((e.score - exact_scores[&e.id]).abs());
        }
        if rapid.ids() == exact.ids() {
            identical += 1.0;
        }
        results.push((format!("fidelity-q{i}-rapid.tsv"), rapid.to_text(cfg.top_k)));
        results.push((format!("fidelity-q{i}-exact.tsv"), exact.to_text(cfg.top_k)));
    }
    timer.lap("retrieve");
    report.metric("spearman.mean", mean(&rho));
    report.metric("spearman.min", min(&rho));
    report.metric(format!("overlap@{}.mean", cfg.top_k), mean(&overlap));
    report.metric(format!("overlap@{}.min", cfg.top_k), min(&overlap));
    report.metric("score.max_abs_diff", max_diff);
    report.metric("order_identical", identical);
    Ok(EvalOutcome { report, results, timings: timer.0 })
}

fn pairs(r: &InfluenceResult) -> Vec<(crate::SourceId, f64)> {
    r.entries.iter().map(|e| (e.id, e.score)).collect()
}

// Backdoor

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackdoorConfig {
    pub corpus: CorpusConfig,
    pub poison: PoisonConfig,
    pub train: TrainConfig,
    pub sketch: SketchSettings,
    /// Attacked queries evaluated (the first ones found).
    pub queries: usize,
    /// Triggered prompts tried while looking for attacked queries.
    pub candidates: usize,
    pub query_stream: u64,
    pub ks: Vec<usize>,
    /// Training samples given random scores for the null control.
    pub control_size: usize,
    pub control_seed: u64,
}

impl Default for BackdoorConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            poison: PoisonConfig { trigger_token: TRIGGER_TOKEN, marker_token: MARKER_TOKEN, rate: 0.1, seed: 3 },
            train: TrainConfig {
                shape: ModelShape { vocab_size: 32, context_window: 4, embed_dim: 8, hidden_dim: 16 },
                seed: 1,
                epochs: 5,
                learning_rate: 0.5,
                batch_size: Some(10),
            },
            sketch: SketchSettings::default(),
            queries: 10,
            candidates: 50,
            query_stream: 100,
            ks: vec![5, 10, 50],
            control_size: 200,
            control_seed: 17,
        }
    }
}

/// Scores the union of the top-`k` and bottom-`k` entries against the
/// positive labels.
fn top_bottom_metrics(r: &InfluenceResult, positives: &BTreeSet<u64>, k: usize) -> Result<(f64, f64)> {
    let chosen: Vec<_> =
        if 2 * k >= r.len() { r.entries.iter().collect() } else { r.top(k).iter().chain(r.bottom(k)).collect() };
    let scores: Vec<f64> = chosen.iter().map(|e| e.score).collect();
    let labels: Vec<bool> = chosen.iter().map(|e| positives.contains(&e.id.sample)).collect();
    Ok((auprc(&scores, &labels)?, auroc(&scores, &labels)?))
}

/// Poisons a corpus, trains on it, finds triggered prompts whose greedy
/// generation emits the marker, and checks that top-ranked training samples
/// are the poisoned ones.
pub fn backdoor_eval(cfg: &BackdoorConfig, work_dir: &Path) -> Result<EvalOutcome> {
    if cfg.ks.is_empty() || cfg.ks.contains(&0) || cfg.queries == 0 {
        return Err(Error::config("backdoor run needs positive k values and at least one query"));
    }
    let mut timer = Timer::start();
    let clean = synthetic_corpus(&cfg.corpus)?;
    let (data, poisoned) = poison_dataset(&clean, &cfg.poison, cfg.corpus.vocab_size)?;
    let (model, spec, store, loss) = prepare(&data, &cfg.train, &cfg.sketch, work_dir, false, &mut timer)?;
    let c = constants(&cfg.train)?;

    let attacked: Vec<ToySample> = query_prompts(&cfg.corpus, cfg.query_stream, cfg.candidates, false)
        .into_iter()
        .filter_map(|p| {
            let mut prompt = vec![cfg.poison.trigger_token];
            prompt.extend(p);
            let generation = model.generate(&prompt, cfg.corpus.prompt_len);
            generation.contains(&cfg.poison.marker_token).then_some((prompt, generation))
        })
        .take(cfg.queries)
        .enumerate()
        .map(|(i, (p, g))| ToySample::new(QUERY_ID_BASE + i as u64, p, g))
        .collect();
    if attacked.is_empty() {
        return Err(Error::data("no triggered prompt produced the marker; nothing to trace"));
    }

    let mut report = EvalReport::new("backdoor");
    echo_training(&mut report, &cfg.corpus, &cfg.train, &spec);
    report.set("poison.rate", cfg.poison.rate);
    report.set("poison.seed", cfg.poison.seed);
    report.set("poison.trigger", cfg.poison.trigger_token);
    report.set("poison.marker", cfg.poison.marker_token);
    report.set("queries", cfg.queries);
    report.set("candidates", cfg.candidates);
    report.set("query_stream", cfg.query_stream);
    report.set("control.size", cfg.control_size);
    report.set("control.seed", cfg.control_seed);
    report.metric("train.final_loss", loss);
    report.metric("poisoned", poisoned.len() as f64);
    report.metric("attacked_queries", attacked.len() as f64);

    let kmax = *cfg.ks.iter().max().expect("non-empty");
    let mut per_k = vec![[Vec::new(), Vec::new(), Vec::new(), Vec::new()]; cfg.ks.len()];
    let mut rho = Vec::new();
    let mut results = Vec::new();
    for (i, q) in attacked.iter().enumerate() {
        let rapid = rank_topk(&InfluenceQuery::build(&model, q, &spec, InfluenceMode::Sample, None, c)?, &store, kmax)?;
        let exact = exact_influence_oracle(&model, &data, q, c, InfluenceMode::Sample, None, DEFAULT_ORACLE_BUDGET)?;
        for (slot, &k) in per_k.iter_mut().zip(&cfg.ks) {
            let (rp, rr) = top_bottom_metrics(&rapid, &poisoned, k)?;
            let (op, or) = top_bottom_metrics(&exact, &poisoned, k)?;
            slot[0].push(rp);
            slot[1].push(rr);
            slot[2].push(op);
            slot[3].push(or);
        }
        rho.push(agreement_stats(&pairs(&rapid), &pairs(&exact), &[kmax])?.spearman);
        results.push((format!("backdoor-q{i}-rapid.tsv"), rapid.to_text(kmax)));
        results.push((format!("backdoor-q{i}-exact.tsv"), exact.to_text(kmax)));
    }
    timer.lap("retrieve");
    for (slot, k) in per_k.iter().zip(&cfg.ks) {
        report.metric(format!("rapid.auprc@{k}"), mean(&slot[0]));
        report.metric(format!("rapid.auroc@{k}"), mean(&slot[1]));
        report.metric(format!("exact.auprc@{k}"), mean(&slot[2]));
        report.metric(format!("exact.auroc@{k}"), mean(&slot[3]));
    }
    report.metric("spearman.mean", mean(&rho));

    let n = cfg.control_size.min(data.len());
    let mut rng = SplitRng::new(cfg.control_seed, 0);
    let scores: Vec<f64> = (0..n).map(|_| rng.unit()).collect();
    let labels: Vec<bool> = data[..n].iter().map(|s| poisoned.contains(&s.id)).collect();
    report.metric("control.auroc", auroc(&scores, &labels)?);
    Ok(EvalOutcome { report, results, timings: timer.0 })
}

// Error tracing

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorTracingConfig {
    pub corpus: CorpusConfig,
    pub perturb: PerturbConfig,
    pub train: TrainConfig,
    pub sketch: SketchSettings,
    /// Incorrect generations evaluated per entity pair.
    pub queries: usize,
    pub candidates: usize,
    pub query_stream: u64,
    pub ks: Vec<usize>,
    pub control_seed: u64,
}

impl Default for ErrorTracingConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig { fact_rate: 0.2, ..CorpusConfig::default() },
            perturb: PerturbConfig { pairs: vec![(ENTITY_A, ENTITY_B)], probability: 0.8, seed: 5 },
            train: FidelityConfig::default().train,
            sketch: SketchSettings::default(),
            queries: 10,
            candidates: 40,
            query_stream: 200,
            ks: vec![5, 10, 25, 50],
            control_seed: 17,
        }
    }
}

fn ap_all(r: &InfluenceResult, positives: &HashSet<u64>, ks: &[usize]) -> Result<Vec<f64>> {
    let ranked: Vec<u64> = r.entries.iter().map(|e| e.id.sample).collect();
    ks.iter().map(|&k| ap_at_k(&ranked, positives, k)).collect()
}

/// Trains on a corpus where some fact samples name the wrong entity, then
/// traces incorrect generations back to those samples. Scoring is done per
/// sample and through the wrong entity token alone.
pub fn error_tracing_eval(cfg: &ErrorTracingConfig, work_dir: &Path) -> Result<EvalOutcome> {
    if cfg.ks.is_empty() || cfg.ks.contains(&0) || cfg.queries == 0 {
        return Err(Error::config("error tracing needs positive k values and at least one query"));
    }
    let mut timer = Timer::start();
    let clean = synthetic_corpus(&cfg.corpus)?;
    let (data, _) = perturb_entities(&clean, &cfg.perturb)?;
    let (model, spec, store, loss) = prepare(&data, &cfg.train, &cfg.sketch, work_dir, true, &mut timer)?;
    let c = constants(&cfg.train)?;

    let mut report = EvalReport::new("error-tracing");
    echo_training(&mut report, &cfg.corpus, &cfg.train, &spec);
    let pairs_text: Vec<String> = cfg.perturb.pairs.iter().map(|(a, b)| format!("{a}>{b}")).collect();
    report.set("perturb.pairs", pairs_text.join(","));
    report.set("perturb.probability", cfg.perturb.probability);
    report.set("perturb.seed", cfg.perturb.seed);
    report.set("queries", cfg.queries);
    report.set("candidates", cfg.candidates);
    report.set("query_stream", cfg.query_stream);
    report.set("control.seed", cfg.control_seed);
    report.metric("train.final_loss", loss);

    let prompts = query_prompts(&cfg.corpus, cfg.query_stream, cfg.candidates, true);
    let kmax = *cfg.ks.iter().max().expect("non-empty");
    let mut results = Vec::new();
    for (pi, &(from, to)) in cfg.perturb.pairs.iter().enumerate() {
        // Perturbed samples of this pair: the source entity was present and
        // now the target is where it used to be.
        let positives: HashSet<u64> = clean
            .iter()
            .zip(&data)
            .filter(|(a, b)| {
                a.generation_tokens.contains(&from)
                    && a.generation_tokens != b.generation_tokens
                    && b.generation_tokens.contains(&to)
            })
            .map(|(a, _)| a.id)
            .collect();
        let incorrect: Vec<(ToySample, usize)> = prompts
            .iter()
            .filter_map(|p| {
                let g = model.generate(p, cfg.corpus.prompt_len);
                let j = g.iter().position(|&t| t == to)?;
                Some((p.clone(), g, j))
            })
            .take(cfg.queries)
            .enumerate()
            .map(|(i, (p, g, j))| (ToySample::new(QUERY_ID_BASE + i as u64, p, g), j))
            .collect();
        let pre = format!("pair{pi}");
        report.metric(format!("{pre}.perturbed"), positives.len() as f64);
        report.metric(format!("{pre}.incorrect_queries"), incorrect.len() as f64);
        if incorrect.is_empty() {
            return Err(Error::data(format!("no generation contains entity {to}; nothing to trace")));
        }
        let mut sums =
            [vec![0.0; cfg.ks.len()], vec![0.0; cfg.ks.len()], vec![0.0; cfg.ks.len()], vec![0.0; cfg.ks.len()]];
        for (qi, (q, j)) in incorrect.iter().enumerate() {
            let runs = [
                (
                    "sample.rapid",
                    rank_topk(&InfluenceQuery::build(&model, q, &spec, InfluenceMode::Sample, None, c)?, &store, kmax)?,
                ),
                (
                    "token.rapid",
                    rank_topk(
                        &InfluenceQuery::build(&model, q, &spec, InfluenceMode::QueryToken, Some(*j), c)?,
                        &store,
                        kmax,
                    )?,
                ),
                (
                    "sample.exact",
                    exact_influence_oracle(&model, &data, q, c, InfluenceMode::Sample, None, DEFAULT_ORACLE_BUDGET)?,
                ),
                (
                    "token.exact",
                    exact_influence_oracle(
                        &model,
                        &data,
                        q,
                        c,
                        InfluenceMode::QueryToken,
                        Some(*j),
                        DEFAULT_ORACLE_BUDGET,
                    )?,
                ),
            ];
            for (sum, (name, r)) in sums.iter_mut().zip(&runs) {
                for (s, v) in sum.iter_mut().zip(ap_all(r, &positives, &cfg.ks)?) {
                    *s += v;
                }
                results.push((format!("errortrace-{pre}-q{qi}-{name}.tsv"), r.to_text(kmax)));
            }
        }
        let n = incorrect.len() as f64;
        for (sum, name) in sums.iter().zip(["sample.rapid", "token.rapid", "sample.exact", "token.exact"]) {
            for (s, k) in sum.iter().zip(&cfg.ks) {
                report.metric(format!("{pre}.{name}.ap@{k}"), s / n);
            }
        }
        let mut ids: Vec<u64> = data.iter().map(|s| s.id).collect();
        SplitRng::new(cfg.control_seed, pi as u64).shuffle(&mut ids);
        for &k in &cfg.ks {
            report.metric(format!("{pre}.control.ap@{k}"), ap_at_k(&ids, &positives, k)?);
        }
        report.metric(format!("{pre}.prevalence"), positives.len() as f64 / data.len() as f64);
    }
    timer.lap("retrieve");
    Ok(EvalOutcome { report, results, timings: timer.0 })
}
