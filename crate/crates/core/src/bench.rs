//! Retrieval timing: sketch inner products over a cache store versus exact
//! inner products streamed from a file of full-length vectors.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cache::{CacheStore, OpenMode};
use crate::error::{Error, Result};
use crate::eval::metrics::topk_overlap;
use crate::retrieval::{score_store, InfluenceMode, InfluenceQuery, InfluenceResult, ScoredEntry, TrainingConstants};
use crate::rng::SplitRng;
use crate::sketch::{compress_values, make_sketch_spec, RapidGrad};
use crate::source::SourceId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub vectors: usize,
    pub raw_length: u64,
    pub k: u64,
    pub lambda: u32,
    pub seed: u64,
    pub queries: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { vectors: 1000, raw_length: 1 << 20, k: 1 << 16, lambda: 20, seed: 0, queries: 1 }
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub padded_length: u64,
    pub cache_time: Duration,
    /// Mean wall time per query.
    pub sketch_time: Duration,
    pub exact_time: Duration,
    /// Mean top-10 overlap between the two rankings.
    pub overlap_at_10: f64,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.exact_time.as_secs_f64() / self.sketch_time.as_secs_f64().max(1e-12)
    }

    /// `# gradtrace-bench 1`, then one `key value` line per field.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::from("# gradtrace-bench 1\n");
        for (k, v) in [
            ("vectors", c.vectors.to_string()),
            ("raw_length", c.raw_length.to_string()),
            ("padded_length", self.padded_length.to_string()),
            ("k", c.k.to_string()),
            ("lambda", c.lambda.to_string()),
            ("seed", c.seed.to_string()),
            ("queries", c.queries.to_string()),
            ("cache_seconds", format!("{:.6}", self.cache_time.as_secs_f64())),
            ("sketch_query_seconds", format!("{:.6}", self.sketch_time.as_secs_f64())),
            ("exact_query_seconds", format!("{:.6}", self.exact_time.as_secs_f64())),
            ("speedup", format!("{:.3}", self.speedup())),
            ("overlap_at_10", format!("{:.3}", self.overlap_at_10)),
        ] {
            let _ = writeln!(out, "{k} {v}");
        }
        out
    }
}

/// Parses the `key value` lines of a bench table.
pub fn parse_bench_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut lines = text.lines();
    if lines.next() != Some("# gradtrace-bench 1") {
        return Err(Error::data("missing bench header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once(' ')
                .map(|(k, v)| (k.to_owned(), v.to_owned()))
                .ok_or_else(|| Error::data(format!("malformed bench line {l:?}")))
        })
        .collect()
}

fn vector(seed: u64, stream: u64, len: usize) -> Vec<f32> {
    let mut rng = SplitRng::new(seed, stream);
    (0..len).map(|_| rng.symmetric(1.0) as f32).collect()
}

fn exact_scan(path: &Path, q: &[f32], vectors: usize) -> Result<Vec<ScoredEntry>> {
    let mut reader = BufReader::with_capacity(1 << 22, File::open(path)?);
    let mut buf = vec![0u8; q.len() * 4];
    (0..vectors as u64)
        .map(|id| {
            reader.read_exact(&mut buf)?;
            let score: f64 = buf
                .chunks_exact(4)
                .zip(q)
                .map(|(b, &x)| f64::from(f32::from_le_bytes(b.try_into().unwrap())) * f64::from(x))
                .sum();
            Ok(ScoredEntry { id: SourceId::sample(id), score })
        })
        .collect()
}

/// Writes `vectors` random full-length vectors to `work_dir` both raw and
/// sketched, then times sketch retrieval against an exact streaming scan.
pub fn retrieval_bench(cfg: &BenchConfig, work_dir: &Path) -> Result<BenchReport> {
    if cfg.vectors == 0 || cfg.queries == 0 {
        return Err(Error::config("bench needs at least one vector and one query"));
    }
    let spec = make_sketch_spec(cfg.raw_length, cfg.k, cfg.lambda, cfg.seed)?;
    let n = spec.raw_length();
    std::fs::create_dir_all(work_dir)?;
    let full_path = work_dir.join("bench-full.f32");
    let store_path = work_dir.join("bench-sketch.gtc");
    for p in [store_path.clone(), crate::cache::store::index_path_for(&store_path)] {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }

    let start = Instant::now();
    let store = CacheStore::open(&store_path, spec.id(), spec.k(), OpenMode::Create)?;
    let mut full = BufWriter::with_capacity(1 << 22, File::create(&full_path)?);
    for id in 0..cfg.vectors as u64 {
        let v = vector(cfg.seed, 1 + id, n);
        for x in &v {
            full.write_all(&x.to_le_bytes())?;
        }
        let sketch = RapidGrad::from_full(&compress_values(&v, &spec)?, SourceId::sample(id), spec.id())?;
        store.put(&sketch)?;
    }
    full.flush()?;
    drop(full);
    store.commit()?;
    let cache_time = start.elapsed();

    let c = TrainingConstants::new(1, 1.0)?;
    let (mut sketch_time, mut exact_time, mut overlap) = (Duration::ZERO, Duration::ZERO, 0.0);
    for qi in 0..cfg.queries as u64 {
        let q = vector(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, qi, n);
        let t = Instant::now();
        let query = InfluenceQuery {
            mode: InfluenceMode::Sample,
            constants: c,
            sample_sketch: Some(RapidGrad::from_full(
                &compress_values(&q, &spec)?,
                SourceId::sample(u64::MAX),
                spec.id(),
            )?),
            token_sketches: Vec::new(),
            query_token: None,
        };
        let rapid = score_store(&query, &store)?;
        sketch_time += t.elapsed();

        let t = Instant::now();
        let exact =
            InfluenceResult::new(InfluenceMode::Sample, None, c, None, exact_scan(&full_path, &q, cfg.vectors)?)?;
        exact_time += t.elapsed();
        overlap += topk_overlap(&rapid.ids(), &exact.ids(), 10.min(cfg.vectors))?;
    }
    let per = |d: Duration| d / cfg.queries as u32;
    std::fs::remove_file(&full_path)?;
    Ok(BenchReport {
        config: cfg.clone(),
        padded_length: spec.padded_length(),
        cache_time,
        sketch_time: per(sketch_time),
        exact_time: per(exact_time),
        overlap_at_10: overlap / cfg.queries as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_runs_and_parses() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BenchConfig { vectors: 20, raw_length: 1000, k: 1024, lambda: 2, seed: 1, queries: 2 };
        let r = retrieval_bench(&cfg, dir.path()).unwrap();
        assert_eq!(r.padded_length, 1024);
        // Lossless: both paths rank identically up to half-precision noise.
        assert!(r.overlap_at_10 >= 0.9, "{}", r.overlap_at_10);
        let table = parse_bench_text(&r.to_text()).unwrap();
        assert_eq!(table[0], ("vectors".to_owned(), "20".to_owned()));
        assert!(table.iter().any(|(k, _)| k == "speedup"));
    }
}
