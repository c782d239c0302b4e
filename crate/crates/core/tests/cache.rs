use std::collections::BTreeSet;
use std::fs::OpenOptions;

use gradtrace::cache::{record_len, run_cache_workers, CacheRunOptions, CacheStore, OpenMode, HEADER_LEN};
use gradtrace::eval::corpus::{synthetic_corpus, CorpusConfig};
use gradtrace::grad::{ModelShape, ToyLm, ToySample};
use gradtrace::sketch::{make_sketch_spec, SketchSpec};
use gradtrace::{Error, SourceId};
use proptest::prelude::*;

fn fixture(samples: usize) -> (Vec<ToySample>, ToyLm<f64>, SketchSpec) {
    let data = synthetic_corpus(&CorpusConfig { samples, ..CorpusConfig::default() }).unwrap();
    let model = ToyLm::init(ModelShape { vocab_size: 32, context_window: 4, embed_dim: 4, hidden_dim: 8 }, 1).unwrap();
    let spec = make_sketch_spec(model.parameter_count() as u64, 64, 6, 2).unwrap();
    (data, model, spec)
}

#[test]
fn every_worker_count_caches_each_sample_once() {
    let (data, model, spec) = fixture(60);
    let dir = tempfile::tempdir().unwrap();
    let mut contents = Vec::new();
    for workers in [1, 2, 4, 8] {
        let store =
            CacheStore::open(dir.path().join(format!("w{workers}")), spec.id(), spec.k(), OpenMode::Create).unwrap();
        let summary = run_cache_workers(&data, &model, &spec, &store, &CacheRunOptions::with_workers(workers)).unwrap();
        assert_eq!(summary.written(), data.len());
        let ids: BTreeSet<u64> = store.ids().into_iter().map(|s| s.sample).collect();
        assert_eq!(ids, data.iter().map(|s| s.id).collect());
        contents.push(store.load_all().unwrap());
    }
    assert!(contents.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn rerun_is_a_no_op_and_empty_dataset_gives_empty_store() {
    let (data, model, spec) = fixture(10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c");
    let store = CacheStore::open(&path, spec.id(), spec.k(), OpenMode::Create).unwrap();
    run_cache_workers(&data, &model, &spec, &store, &CacheRunOptions::with_workers(2)).unwrap();
    let size = std::fs::metadata(&path).unwrap().len();
    let again = run_cache_workers(&data, &model, &spec, &store, &CacheRunOptions::with_workers(2)).unwrap();
    assert_eq!((again.written(), again.skipped), (0, 10));
    assert_eq!(std::fs::metadata(&path).unwrap().len(), size);

    let empty = CacheStore::open(dir.path().join("e"), spec.id(), spec.k(), OpenMode::Create).unwrap();
    let s = run_cache_workers(&[], &model, &spec, &empty, &CacheRunOptions::with_workers(4)).unwrap();
    assert_eq!(s.written(), 0);
    assert!(empty.is_empty());
    assert_eq!(empty.verify().unwrap(), 0);
}

#[test]
fn wrong_spec_is_rejected() {
    let (data, model, spec) = fixture(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c");
    let store = CacheStore::open(&path, spec.id(), spec.k(), OpenMode::Create).unwrap();
    run_cache_workers(&data, &model, &spec, &store, &CacheRunOptions::with_workers(1)).unwrap();
    drop(store);
    let other = make_sketch_spec(spec.raw_length() as u64, 64, 6, 3).unwrap();
    assert!(matches!(CacheStore::open(&path, other.id(), 64, OpenMode::Read), Err(Error::SpecMismatch { .. })));
}

#[test]
fn truncated_last_record_is_excluded() {
    let (data, model, spec) = fixture(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c");
    let store = CacheStore::open(&path, spec.id(), spec.k(), OpenMode::Create).unwrap();
    run_cache_workers(&data, &model, &spec, &store, &CacheRunOptions::with_workers(1)).unwrap();
    drop(store);
    let len = std::fs::metadata(&path).unwrap().len();
    OpenOptions::new().write(true).open(&path).unwrap().set_len(len - 10).unwrap();
    let store = CacheStore::open(&path, spec.id(), spec.k(), OpenMode::Read).unwrap();
    assert_eq!(store.len(), 4);
    assert_eq!(store.verify().unwrap(), 4);
    assert!(!store.contains(SourceId::sample(4)));
}

#[test]
fn killed_worker_leaves_a_gap_that_a_rerun_fills() {
    let (data, model, spec) = fixture(40);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c");
    let store = CacheStore::open(&path, spec.id(), spec.k(), OpenMode::Create).unwrap();
    let opts = CacheRunOptions { workers: 1, token_level: false, kill_worker_after: Some((0, 5)) };
    let first = run_cache_workers(&data, &model, &spec, &store, &opts).unwrap();
    assert_eq!(first.written(), 5);
    assert_eq!(first.unprocessed.len(), 35);
    let second = run_cache_workers(&data, &model, &spec, &store, &CacheRunOptions::with_workers(4)).unwrap();
    assert_eq!(second.written(), first.unprocessed.len());
    assert_eq!(store.len(), 40);
    let rec = record_len(spec.k());
    drop(store);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), HEADER_LEN + 40 * rec);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Any prefix of the record file opens as a store whose records all
    /// pass their checksums.
    #[test]
    fn every_prefix_is_readable(cut in 0.0f64..1.0) {
        let (data, model, spec) = fixture(8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c");
        let store = CacheStore::open(&path, spec.id(), spec.k(), OpenMode::Create).unwrap();
        run_cache_workers(&data, &model, &spec, &store, &CacheRunOptions { workers: 1, token_level: true, kill_worker_after: None }).unwrap();
        drop(store);
        let len = std::fs::metadata(&path).unwrap().len();
        let keep = HEADER_LEN + ((len - HEADER_LEN) as f64 * cut) as u64;
        OpenOptions::new().write(true).open(&path).unwrap().set_len(keep).unwrap();
        let store = CacheStore::open(&path, spec.id(), spec.k(), OpenMode::Read).unwrap();
        let n = store.verify().unwrap();
        prop_assert_eq!(n as u64, (keep - HEADER_LEN) / record_len(spec.k()));
    }
}
