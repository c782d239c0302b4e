use gradtrace::cache::{run_cache_workers, CacheRunOptions, CacheStore, OpenMode};
use gradtrace::eval::corpus::{synthetic_corpus, CorpusConfig};
use gradtrace::grad::{train_toy, ModelShape, ToyLm, ToySample, TrainConfig};
use gradtrace::pipeline::sketch_sample;
use gradtrace::retrieval::{
    exact_influence_oracle, rank_topk, score_store, InfluenceMode, InfluenceQuery, InfluenceResult, TrainingConstants,
    DEFAULT_ORACLE_BUDGET,
};
use gradtrace::sketch::{make_sketch_spec, sketch_inner, SignMode, SketchParams, SketchSpec};
use gradtrace::SourceId;
use proptest::prelude::*;

fn trained(samples: usize) -> (Vec<ToySample>, ToyLm<f64>) {
    let data = synthetic_corpus(&CorpusConfig { samples, ..CorpusConfig::default() }).unwrap();
    let shape = ModelShape { vocab_size: 32, context_window: 4, embed_dim: 4, hidden_dim: 8 };
    let cfg = TrainConfig { shape, seed: 1, epochs: 2, learning_rate: 0.5, batch_size: Some(10) };
    (data.clone(), train_toy::<f64>(&data, &cfg).unwrap().0)
}

fn cached(
    data: &[ToySample],
    model: &ToyLm<f64>,
    spec: &SketchSpec,
    dir: &tempfile::TempDir,
    tokens: bool,
) -> CacheStore {
    let store = CacheStore::open(dir.path().join("c.gtc"), spec.id(), spec.k(), OpenMode::Create).unwrap();
    let opts = CacheRunOptions { workers: 2, token_level: tokens, kill_worker_after: None };
    run_cache_workers(data, model, spec, &store, &opts).unwrap();
    store
}

fn constants() -> TrainingConstants {
    TrainingConstants::new(2, 0.5).unwrap()
}

fn query_sample() -> ToySample {
    ToySample::new(1 << 40, vec![4, 9, 2], vec![4, 9, 2])
}

#[test]
fn single_record_store_ranks_first() {
    let (data, model) = trained(1);
    let spec = make_sketch_spec(model.parameter_count() as u64, 64, 6, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = cached(&data, &model, &spec, &dir, false);
    let q = InfluenceQuery::build(&model, &query_sample(), &spec, InfluenceMode::Sample, None, constants()).unwrap();
    let r = rank_topk(&q, &store, 10).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r.top(10)[0].id, SourceId::sample(data[0].id));
}

#[test]
fn ranking_matches_an_independent_sort() {
    let (data, model) = trained(100);
    let spec = make_sketch_spec(model.parameter_count() as u64, 128, 6, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = cached(&data, &model, &spec, &dir, false);
    let query = query_sample();
    let q = InfluenceQuery::build(&model, &query, &spec, InfluenceMode::Sample, None, constants()).unwrap();
    let r = score_store(&q, &store).unwrap();

    let t = sketch_sample(&model, &query, &spec).unwrap();
    let mut expected: Vec<(f64, u64)> = data
        .iter()
        .map(|s| (constants().scale() * sketch_inner(&t, &sketch_sample(&model, s, &spec).unwrap()).unwrap(), s.id))
        .collect();
    expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let got: Vec<(f64, u64)> = r.entries.iter().map(|e| (e.score, e.id.sample)).collect();
    assert_eq!(got, expected);
}

#[test]
fn k_larger_than_store_returns_everything() {
    let (data, model) = trained(7);
    let spec = make_sketch_spec(model.parameter_count() as u64, 64, 6, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = cached(&data, &model, &spec, &dir, false);
    let q = InfluenceQuery::build(&model, &query_sample(), &spec, InfluenceMode::Sample, None, constants()).unwrap();
    let r = rank_topk(&q, &store, 50).unwrap();
    assert_eq!(r.top(50).len(), 7);
    assert_eq!(r.bottom(50).len(), 7);
    assert!(rank_topk(&q, &store, 0).is_err());
}

#[test]
fn lossless_identity_sketch_reproduces_the_oracle() {
    let (data, model) = trained(40);
    let n = model.parameter_count() as u64;
    let k = n.next_power_of_two();
    let spec = SketchSpec::new(SketchParams::new(n, k, 0, 1).with_signs(SignMode::AllPlus)).unwrap();
    let query = query_sample();
    let dir = tempfile::tempdir().unwrap();
    let store = cached(&data, &model, &spec, &dir, true);
    for (mode, token) in [
        (InfluenceMode::Sample, None),
        (InfluenceMode::TrainToken, None),
        (InfluenceMode::QueryToken, Some(1)),
        (InfluenceMode::TokenPair, Some(2)),
    ] {
        if mode == InfluenceMode::Sample {
            let sample_dir = tempfile::tempdir().unwrap();
            let sample_store = cached(&data, &model, &spec, &sample_dir, false);
            check_against_oracle(&model, &data, &query, &spec, &sample_store, mode, token);
        } else {
            check_against_oracle(&model, &data, &query, &spec, &store, mode, token);
        }
    }
}

fn check_against_oracle(
    model: &ToyLm<f64>,
    data: &[ToySample],
    query: &ToySample,
    spec: &SketchSpec,
    store: &CacheStore,
    mode: InfluenceMode,
    token: Option<usize>,
) {
    let q = InfluenceQuery::build(model, query, spec, mode, token, constants()).unwrap();
    let rapid = score_store(&q, store).unwrap();
    let exact = exact_influence_oracle(model, data, query, constants(), mode, token, DEFAULT_ORACLE_BUDGET).unwrap();
    assert_eq!(rapid.len(), exact.len(), "{mode}");
    let exact_scores = exact.score_map();
    // Half-precision storage bounds the per-score error.
    for e in &rapid.entries {
        let x = exact_scores[&e.id];
        assert!((e.score - x).abs() <= 2e-3 * constants().scale(), "{mode} {}: {} vs {x}", e.id, e.score);
    }
    let top = |r: &InfluenceResult| r.top(5).iter().map(|e| e.id).collect::<Vec<_>>();
    assert_eq!(top(&rapid), top(&exact), "{mode}");
}

#[test]
fn sample_inner_product_decomposes_over_token_pairs() {
    let (data, model) = trained(12);
    let query = query_sample();
    let gt = model.sample_gradient(&query).unwrap();
    let tq: Vec<_> = (0..query.generation_tokens.len()).map(|j| model.token_gradient(&query, j).unwrap()).collect();
    for s in &data {
        let gs = model.sample_gradient(s).unwrap();
        let ts: Vec<_> = (0..s.generation_tokens.len()).map(|i| model.token_gradient(s, i).unwrap()).collect();
        let whole = gt.dot(&gs);
        let pairs =
            tq.iter().flat_map(|a| ts.iter().map(move |b| a.dot(b))).sum::<f64>() / (tq.len() * ts.len()) as f64;
        assert!((whole - pairs).abs() <= 1e-10 * whole.abs().max(1e-12), "{whole} vs {pairs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The `e * eta` factor rescales scores without reordering them.
    #[test]
    fn training_constants_do_not_change_the_order(epochs in 1u64..20, eta in 1e-4f64..10.0) {
        let (data, model) = trained(20);
        let spec = make_sketch_spec(model.parameter_count() as u64, 64, 6, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = cached(&data, &model, &spec, &dir, false);
        let query = query_sample();
        let unit = TrainingConstants::new(1, 1.0).unwrap();
        let scaled = TrainingConstants::new(epochs, eta).unwrap();
        let a = score_store(&InfluenceQuery::build(&model, &query, &spec, InfluenceMode::Sample, None, unit).unwrap(), &store).unwrap();
        let b = score_store(&InfluenceQuery::build(&model, &query, &spec, InfluenceMode::Sample, None, scaled).unwrap(), &store).unwrap();
        prop_assert_eq!(a.ids(), b.ids());
        for (x, y) in a.entries.iter().zip(&b.entries) {
            prop_assert!((y.score - x.score * scaled.scale()).abs() <= 1e-12 * y.score.abs().max(1e-300));
        }
    }
}
