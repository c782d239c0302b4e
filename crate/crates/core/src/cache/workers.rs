//! Parallel caching: workers claim the lowest unclaimed sample, sketch it
//! and commit it to the shared store.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::cache::store::CacheStore;
use crate::error::{Error, Result};
use crate::grad::{ToyLm, ToySample};
use crate::pipeline::{sketch_sample, sketch_tokens};
use crate::scalar::Scalar;
use crate::sketch::SketchSpec;
use crate::source::SourceId;

#[derive(Clone, Debug, Default)]
pub struct CacheRunOptions {
    pub workers: usize,
    /// Also cache one sketch per generation position.
    pub token_level: bool,
    /// Fault injection: worker `.0` dies after finishing `.1` samples,
    /// abandoning the next sample it claims.
    pub kill_worker_after: Option<(usize, usize)>,
}

impl CacheRunOptions {
    pub fn with_workers(workers: usize) -> Self {
        Self { workers, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct CacheSummary {
    /// Samples each worker sketched and committed.
    pub per_worker: Vec<usize>,
    /// Samples already fully cached before this run.
    pub skipped: usize,
    /// Sample ids still missing from the store after the run.
    pub unprocessed: Vec<u64>,
    pub errors: Vec<String>,
    pub elapsed: Duration,
}

impl CacheSummary {
    pub fn written(&self) -> usize {
        self.per_worker.iter().sum()
    }

    pub fn sketches_per_second(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs > 0.0 {
            self.written() as f64 / secs
        } else {
            0.0
        }
    }
}

fn is_cached(store: &CacheStore, sample: &ToySample, token_level: bool) -> bool {
    store.contains(SourceId::sample(sample.id))
        && (!token_level
            || (0..sample.generation_tokens.len() as u32).all(|j| store.contains(SourceId::token(sample.id, j))))
}

fn cache_one<T: Scalar>(
    model: &ToyLm<T>,
    sample: &ToySample,
    spec: &SketchSpec,
    store: &CacheStore,
    token_level: bool,
) -> Result<()> {
    if token_level {
        for rg in sketch_tokens(model, sample, spec)? {
            store.put(&rg)?;
        }
    }
    // The whole-sample record goes last: its presence marks the sample done.
    store.put(&sketch_sample(model, sample, spec)?)?;
    Ok(())
}

/// Sketches every sample of `dataset` into `store` using `opts.workers`
/// threads. Each sample is written exactly once; already cached samples are
/// skipped, so reruns only fill gaps.
pub fn run_cache_workers<T: Scalar>(
    dataset: &[ToySample],
    model: &ToyLm<T>,
    spec: &SketchSpec,
    store: &CacheStore,
    opts: &CacheRunOptions,
) -> Result<CacheSummary> {
    if opts.workers == 0 {
        return Err(Error::config("worker count must be at least 1"));
    }
    if store.spec_id() != spec.id() {
        return Err(Error::SpecMismatch { expected: spec.id().to_string(), found: store.spec_id().to_string() });
    }
    if store.k() != spec.k() {
        return Err(Error::config(format!("store K={} but spec K={}", store.k(), spec.k())));
    }
    if model.parameter_count() != spec.raw_length() {
        return Err(Error::config(format!(
            "model has {} parameters but spec raw length is {}",
            model.parameter_count(),
            spec.raw_length()
        )));
    }

    let mut order: Vec<&ToySample> = dataset.iter().collect();
    order.sort_by_key(|s| s.id);
    // Build the gather map once, before the threads race for it.
    spec.gather_map()?;

    let start = Instant::now();
    let cursor = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let errors = Mutex::new(Vec::new());
    let per_worker: Vec<usize> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..opts.workers)
            .map(|w| {
                let (cursor, skipped, errors, order) = (&cursor, &skipped, &errors, &order);
                scope.spawn(move || {
                    let mut done = 0usize;
                    loop {
                        let i = cursor.fetch_add(1, Ordering::SeqCst);
                        let Some(sample) = order.get(i) else { break };
                        if is_cached(store, sample, opts.token_level) {
                            skipped.fetch_add(1, Ordering::Relaxed);
                            continue;
                        }
                        if opts.kill_worker_after == Some((w, done)) {
                            break;
                        }
                        match cache_one(model, sample, spec, store, opts.token_level) {
                            Ok(()) => done += 1,
                            Err(e) => {
                                errors.lock().unwrap().push(format!("worker {w}, sample {}: {e}", sample.id));
                                break;
                            }
                        }
                    }
                    done
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("cache worker panicked")).collect()
    });
    store.commit()?;

    let unprocessed = order.iter().filter(|s| !is_cached(store, s, opts.token_level)).map(|s| s.id).collect();
    Ok(CacheSummary {
        per_worker,
        skipped: skipped.into_inner(),
        unprocessed,
        errors: errors.into_inner().unwrap(),
        elapsed: start.elapsed(),
    })
}
