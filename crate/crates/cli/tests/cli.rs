use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gradtrace::bench::parse_bench_text;
use gradtrace::cache::{CacheStore, OpenMode};
use gradtrace::retrieval::parse_result_lines;
use gradtrace::sketch::SketchSpec;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradtrace")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Corpus and trained model in a fresh directory.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["corpus", "--samples", "60", "--out", "data.jsonl"]);
    ok(dir.path(), &["train", "--dataset", "data.jsonl", "--out", "model.gtm", "--seed", "3"]);
    dir
}

fn query_file(dir: &Path) -> PathBuf {
    let path = dir.join("q.jsonl");
    std::fs::write(&path, "{\"id\":999,\"prompt_tokens\":[6,7,8],\"generation_tokens\":[6,7,8]}\n").unwrap();
    path
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train", "--dataset", "nope.jsonl", "--out", "m.gtm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.jsonl"));
    assert_eq!(run(dir.path(), &["train", "--out", "m.gtm"]).status.code(), Some(2));
}

#[test]
fn malformed_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"id\": 1}\n").unwrap();
    let out = run(dir.path(), &["train", "--dataset", "bad.jsonl", "--out", "m.gtm"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn seeded_training_repeats_byte_for_byte() {
    let dir = workspace();
    ok(dir.path(), &["train", "--dataset", "data.jsonl", "--out", "again.gtm", "--seed", "3"]);
    let a = std::fs::read(dir.path().join("model.gtm")).unwrap();
    let b = std::fs::read(dir.path().join("again.gtm")).unwrap();
    assert_eq!(a, b);
    let out = ok(dir.path(), &["train", "--dataset", "data.jsonl", "--out", "other.gtm", "--seed", "4"]);
    assert!(stderr(&out).contains("time train"));
    assert_ne!(a, std::fs::read(dir.path().join("other.gtm")).unwrap());
}

#[test]
fn cache_rerun_is_a_no_op_and_worker_count_does_not_matter() {
    let dir = workspace();
    let d = dir.path();
    let first =
        ok(d, &["cache", "--dataset", "data.jsonl", "--model", "model.gtm", "--cache", "one.gtc", "--workers", "1"]);
    assert!(stderr(&first).contains("throughput"));
    ok(d, &["cache", "--dataset", "data.jsonl", "--model", "model.gtm", "--cache", "four.gtc", "--workers", "4"]);
    let bytes = std::fs::read(d.join("one.gtc")).unwrap();
    let again =
        ok(d, &["cache", "--dataset", "data.jsonl", "--model", "model.gtm", "--cache", "one.gtc", "--workers", "4"]);
    assert!(stderr(&again).contains("cached 0 samples (60 already present)"));
    assert_eq!(std::fs::read(d.join("one.gtc")).unwrap(), bytes);

    let spec = SketchSpec::load(d.join("one.gtc.spec")).unwrap();
    let load = |name: &str| {
        let mut v = CacheStore::open(d.join(name), spec.id(), spec.k(), OpenMode::Read).unwrap().load_all().unwrap();
        v.sort_by_key(|r| r.source());
        v
    };
    assert_eq!(load("one.gtc"), load("four.gtc"));
}

#[test]
fn empty_dataset_gives_an_empty_cache() {
    let dir = workspace();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = ok(dir.path(), &["cache", "--dataset", "empty.jsonl", "--model", "model.gtm", "--cache", "e.gtc"]);
    assert!(stderr(&out).contains("store holds 0 records"));
}

#[test]
fn changed_spec_is_rejected_for_an_existing_cache() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["cache", "--dataset", "data.jsonl", "--model", "model.gtm", "--cache", "c.gtc"]);
    let out = run(d, &["cache", "--dataset", "data.jsonl", "--model", "model.gtm", "--cache", "c.gtc", "--seed", "99"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn lossless_query_matches_the_oracle() {
    let dir = workspace();
    let d = dir.path();
    query_file(d);
    // 1328 parameters pad to 2048.
    ok(d, &["cache", "--dataset", "data.jsonl", "--model", "model.gtm", "--cache", "c.gtc", "--K", "2048", "--tokens"]);
    for (mode, token) in [("sample", None), ("query-token", Some("1")), ("token-pair", Some("2"))] {
        let mut common = vec!["--model", "model.gtm", "--query", "q.jsonl", "--k", "5", "--mode", mode];
        if let Some(t) = token {
            common.extend(["--query-token", t]);
        }
        let mut q = vec!["query", "--cache", "c.gtc", "--out", "rapid.tsv"];
        q.extend(&common);
        let out = ok(d, &q);
        assert!(stderr(&out).contains("time query"));
        let mut o = vec!["oracle", "--dataset", "data.jsonl", "--out", "exact.tsv"];
        o.extend(&common);
        ok(d, &o);
        let rapid = parse_result_lines(&std::fs::read_to_string(d.join("rapid.tsv")).unwrap()).unwrap();
        let exact = parse_result_lines(&std::fs::read_to_string(d.join("exact.tsv")).unwrap()).unwrap();
        assert_eq!(rapid.len(), exact.len());
        for ((ra, ia, sa), (rb, ib, sb)) in rapid.iter().zip(&exact) {
            assert_eq!((ra, ia), (rb, ib), "{mode}");
            assert!((sa - sb).abs() <= 1e-2 * sb.abs().max(1.0), "{mode}: {sa} vs {sb}");
        }
    }
}

#[test]
fn oversized_k_returns_the_full_ranking_with_a_warning() {
    let dir = workspace();
    let d = dir.path();
    query_file(d);
    ok(d, &["cache", "--dataset", "data.jsonl", "--model", "model.gtm", "--cache", "c.gtc"]);
    let out = ok(d, &["query", "--model", "model.gtm", "--cache", "c.gtc", "--query", "q.jsonl", "--k", "100"]);
    assert!(stderr(&out).contains("warning: k=100 exceeds the 60 scored entries"));
    let lines = parse_result_lines(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(lines.len(), 120);
    assert_eq!(lines[59].0, 60);

    let bad = run(d, &["query", "--model", "model.gtm", "--cache", "c.gtc", "--query", "q.jsonl", "--mode", "bogus"]);
    assert_eq!(bad.status.code(), Some(2));
    // Token modes need token sketches in the cache.
    let no_tokens =
        run(d, &["query", "--model", "model.gtm", "--cache", "c.gtc", "--query", "q.jsonl", "--mode", "train-token"]);
    assert_eq!(no_tokens.status.code(), Some(3));
}

#[test]
fn config_file_supplies_defaults_and_flags_override_it() {
    let dir = workspace();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "dataset = \"data.jsonl\"\nmodel = \"model.gtm\"\ncache = \"c.gtc\"\nK = 128\nseed = 5\n",
    )
    .unwrap();
    ok(d, &["--config", "run.toml", "cache", "--seed", "6"]);
    let spec = SketchSpec::load(d.join("c.gtc.spec")).unwrap();
    assert_eq!((spec.k(), spec.params().seed), (128, 6));
    std::fs::write(d.join("bad.toml"), "K = \"big\"\n").unwrap();
    assert_eq!(run(d, &["--config", "bad.toml", "cache"]).status.code(), Some(2));
}

#[test]
fn eval_rerun_writes_a_byte_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), "[backdoor]\nqueries = 2\nks = [5, 10]\n[backdoor.corpus]\nsamples = 200\n")
        .unwrap();
    let first = ok(d, &["--config", "run.toml", "eval", "backdoor", "--out", "a"]);
    assert!(String::from_utf8_lossy(&first.stdout).contains("rapid.auprc@10"));
    assert!(stderr(&first).contains("time retrieve"));
    ok(d, &["--config", "run.toml", "eval", "backdoor", "--out", "b"]);
    for name in ["backdoor-report.txt", "backdoor-q0-rapid.tsv", "backdoor-q1-exact.tsv"] {
        assert_eq!(
            std::fs::read(d.join("a").join(name)).unwrap(),
            std::fs::read(d.join("b").join(name)).unwrap(),
            "{name}"
        );
    }
    let report = std::fs::read_to_string(d.join("a/backdoor-report.txt")).unwrap();
    assert!(report.starts_with("# gradtrace-report 1\nprotocol backdoor\n"));
    assert!(report.contains("setting sketch.seed 9"));
}

#[test]
fn bench_table_parses() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(
        d,
        &["bench", "--vectors", "30", "--raw-length", "8192", "--K", "512", "--work-dir", "w", "--out", "bench.txt"],
    );
    let table = parse_bench_text(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let get = |k: &str| table.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone()).unwrap();
    assert_eq!(get("vectors"), "30");
    assert_eq!(get("padded_length"), "8192");
    assert!(get("speedup").parse::<f64>().unwrap() > 0.0);
    assert_eq!(parse_bench_text(&std::fs::read_to_string(d.join("bench.txt")).unwrap()).unwrap().len(), table.len());
}
