use std::path::{Path, PathBuf};
use std::time::Instant;

use gradtrace::bench::{retrieval_bench, BenchConfig};
use gradtrace::cache::{run_cache_workers, CacheRunOptions, CacheStore, OpenMode};
use gradtrace::eval::corpus::{ENTITY_A, ENTITY_B, MARKER_TOKEN, TRIGGER_TOKEN};
use gradtrace::eval::{
    backdoor_eval, error_tracing_eval, fidelity_eval, perturb_entities, poison_dataset, synthetic_corpus, CorpusConfig,
    EvalOutcome, PerturbConfig, PoisonConfig, SketchSettings,
};
use gradtrace::grad::{checkpoint, read_dataset, train_toy, write_dataset, ModelShape, ToyLm, ToySample, TrainConfig};
use gradtrace::retrieval::{
    exact_influence_oracle, rank_topk, InfluenceMode, InfluenceQuery, InfluenceResult, TrainingConstants,
    DEFAULT_ORACLE_BUDGET,
};
use gradtrace::sketch::{make_sketch_spec, SketchSpec};

use crate::config::RunConfig;
use crate::{Cli, CliError, Command, Common, Protocol, QueryArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Id given to queries built from a prompt; far above corpus ids.
const PROMPT_QUERY_ID: u64 = 1 << 40;

/// Flags merged over the config file.
struct Settings {
    flags: Common,
    file: RunConfig,
}

impl Settings {
    fn dataset(&self) -> Option<PathBuf> {
        self.flags.dataset.clone().or_else(|| self.file.dataset.clone())
    }
    fn model(&self) -> Option<PathBuf> {
        self.flags.model.clone().or_else(|| self.file.model.clone())
    }
    fn cache(&self) -> Option<PathBuf> {
        self.flags.cache.clone().or_else(|| self.file.cache.clone())
    }
    fn out(&self) -> Option<PathBuf> {
        self.flags.out.clone().or_else(|| self.file.out.clone())
    }
    fn k(&self) -> Option<usize> {
        self.flags.k.or(self.file.k)
    }
    fn sketch_k(&self) -> Option<u64> {
        self.flags.sketch_k.or(self.file.sketch_k)
    }
    fn lambda(&self) -> Option<u32> {
        self.flags.lambda.or(self.file.lambda)
    }
    fn seed(&self) -> Option<u64> {
        self.flags.seed.or(self.file.seed)
    }
    fn workers(&self) -> Option<usize> {
        self.flags.workers.or(self.file.workers)
    }
    fn mode(&self) -> Option<String> {
        self.flags.mode.clone().or_else(|| self.file.mode.clone())
    }
    fn eta(&self) -> Option<f64> {
        self.flags.eta.or(self.file.eta)
    }
    fn epochs(&self) -> Option<u64> {
        self.flags.epochs.or(self.file.epochs)
    }
}

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

/// A required input file that must already exist.
fn input(value: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let path = required(value, flag)?;
    if !path.exists() {
        return Err(CliError::Usage(format!("--{flag} {} does not exist", path.display())));
    }
    Ok(path)
}

fn spec_path(cache: &Path) -> PathBuf {
    let mut name = cache.as_os_str().to_owned();
    name.push(".spec");
    PathBuf::from(name)
}

fn timing(stage: &str, start: Instant) {
    eprintln!("time {stage} {:.3}s", start.elapsed().as_secs_f64());
}

pub fn run(cli: Cli) -> Result<()> {
    let file = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Corpus { common, samples, vocab, prompt_len, fact_rate, poison_rate, perturb_p } => {
            let s = Settings { flags: common, file };
            let seed = s.seed().unwrap_or(CorpusConfig::default().seed);
            let cfg = CorpusConfig { samples, vocab_size: vocab, prompt_len, seed, fact_rate };
            corpus(&s, &cfg, poison_rate, perturb_p)
        }
        Command::Train { common, vocab, context, embed, hidden, batch } => {
            let s = Settings { flags: common, file };
            let t = s.file.train.as_ref();
            let shape = ModelShape {
                vocab_size: vocab.or(t.and_then(|t| t.vocab_size)).unwrap_or(32),
                context_window: context.or(t.and_then(|t| t.context_window)).unwrap_or(4),
                embed_dim: embed.or(t.and_then(|t| t.embed_dim)).unwrap_or(8),
                hidden_dim: hidden.or(t.and_then(|t| t.hidden_dim)).unwrap_or(16),
            };
            let batch = batch.or(t.and_then(|t| t.batch_size)).unwrap_or(10);
            train(&s, shape, batch)
        }
        Command::Cache { common, tokens } => cache(&Settings { flags: common, file }, tokens),
        Command::Query { common, query: q } => query(&Settings { flags: common, file }, &q, false),
        Command::Oracle { common, query: q } => query(&Settings { flags: common, file }, &q, true),
        Command::Eval { protocol, common, queries, lossless } => {
            eval(&Settings { flags: common, file }, protocol, queries, lossless)
        }
        Command::Bench { common, vectors, raw_length, queries, work_dir } => {
            let s = Settings { flags: common, file };
            let mut cfg = s.file.bench.clone().unwrap_or_default();
            cfg.vectors = vectors.unwrap_or(cfg.vectors);
            cfg.raw_length = raw_length.unwrap_or(cfg.raw_length);
            cfg.queries = queries.unwrap_or(cfg.queries);
            cfg.k = s.sketch_k().unwrap_or(cfg.k);
            cfg.lambda = s.lambda().unwrap_or(cfg.lambda);
            cfg.seed = s.seed().unwrap_or(cfg.seed);
            bench(&s, &cfg, work_dir)
        }
    }
}

fn corpus(s: &Settings, cfg: &CorpusConfig, poison_rate: Option<f64>, perturb_p: Option<f64>) -> Result<()> {
    let out = required(s.out(), "out")?;
    let mut data = synthetic_corpus(cfg)?;
    let mut labels = None;
    if let Some(rate) = poison_rate {
        let p = PoisonConfig { trigger_token: TRIGGER_TOKEN, marker_token: MARKER_TOKEN, rate, seed: cfg.seed };
        let (d, l) = poison_dataset(&data, &p, cfg.vocab_size)?;
        data = d;
        labels = Some(l);
    }
    if let Some(probability) = perturb_p {
        let p = PerturbConfig { pairs: vec![(ENTITY_A, ENTITY_B)], probability, seed: cfg.seed };
        let (d, l) = perturb_entities(&data, &p)?;
        data = d;
        labels = Some(labels.unwrap_or_default().union(&l).copied().collect());
    }
    write_dataset(&out, &data)?;
    eprintln!("wrote {} samples to {}", data.len(), out.display());
    if let Some(l) = labels {
        let path = out.with_extension("labels");
        let text: String = l.iter().map(|id| format!("{id}\n")).collect();
        std::fs::write(&path, text)?;
        eprintln!("wrote {} labeled ids to {}", l.len(), path.display());
    }
    Ok(())
}

fn train(s: &Settings, shape: ModelShape, batch: usize) -> Result<()> {
    let data = read_dataset(input(s.dataset(), "dataset")?)?;
    let out = required(s.out().or_else(|| s.model()), "out")?;
    let cfg = TrainConfig {
        shape,
        seed: s.seed().unwrap_or(1),
        epochs: s.epochs().unwrap_or(5),
        learning_rate: s.eta().unwrap_or(0.5),
        batch_size: (batch > 0).then_some(batch),
    };
    let start = Instant::now();
    let (model, report) = train_toy::<f64>(&data, &cfg)?;
    checkpoint::save(&model, &out)?;
    eprintln!(
        "trained {} parameters on {} samples: loss {:.6} -> {:.6}",
        model.parameter_count(),
        data.len(),
        report.initial_loss,
        report.final_loss()
    );
    timing("train", start);
    Ok(())
}

fn build_spec(s: &Settings, raw_length: u64) -> Result<SketchSpec> {
    let defaults = SketchSettings::default();
    let k = match s.sketch_k() {
        Some(k) => k,
        None => defaults.resolve_k(raw_length)?,
    };
    Ok(make_sketch_spec(raw_length, k, s.lambda().unwrap_or(defaults.lambda), s.seed().unwrap_or(defaults.seed))?)
}

fn cache(s: &Settings, tokens: bool) -> Result<()> {
    let data = read_dataset(input(s.dataset(), "dataset")?)?;
    let model: ToyLm<f64> = checkpoint::load(input(s.model(), "model")?)?;
    let path = required(s.cache(), "cache")?;
    let spec = build_spec(s, model.parameter_count() as u64)?;
    let store = CacheStore::open(&path, spec.id(), spec.k(), OpenMode::Create)?;
    spec.save(spec_path(&path))?;
    let workers = s.workers().unwrap_or(1);
    let summary = run_cache_workers(
        &data,
        &model,
        &spec,
        &store,
        &CacheRunOptions { workers, token_level: tokens, kill_worker_after: None },
    )?;
    if !summary.errors.is_empty() {
        return Err(gradtrace::Error::Invariant(summary.errors.join("; ")).into());
    }
    eprintln!(
        "spec {} K={} padded={} lambda={} seed={}",
        spec.id(),
        spec.k(),
        spec.padded_length(),
        spec.params().lambda,
        spec.params().seed
    );
    eprintln!(
        "cached {} samples ({} already present) with {workers} workers; store holds {} records",
        summary.written(),
        summary.skipped,
        store.len()
    );
    eprintln!("throughput {:.1} samples/s", summary.sketches_per_second());
    eprintln!("time cache {:.3}s", summary.elapsed.as_secs_f64());
    Ok(())
}

fn query_sample(model: &ToyLm<f64>, q: &QueryArgs) -> Result<ToySample> {
    if let Some(path) = &q.query {
        if !path.exists() {
            return Err(CliError::Usage(format!("--query {} does not exist", path.display())));
        }
        let samples = read_dataset(path)?;
        let found = match q.query_id {
            Some(id) => samples.into_iter().find(|s| s.id == id),
            None => samples.into_iter().next(),
        };
        return found.ok_or_else(|| gradtrace::Error::Data(format!("no query sample in {}", path.display())).into());
    }
    let Some(prompt) = &q.prompt else {
        return Err(CliError::Usage("give --query or --prompt".into()));
    };
    let tokens = prompt
        .split_whitespace()
        .map(|t| t.parse::<u32>().map_err(|_| CliError::Usage(format!("bad prompt token {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let generation = model.generate(&tokens, q.max_tokens);
    eprintln!("query generation: {}", generation.iter().map(u32::to_string).collect::<Vec<_>>().join(" "));
    Ok(ToySample::new(PROMPT_QUERY_ID, tokens, generation))
}

fn query(s: &Settings, q: &QueryArgs, exact: bool) -> Result<()> {
    let model: ToyLm<f64> = checkpoint::load(input(s.model(), "model")?)?;
    let sample = query_sample(&model, q)?;
    let mode: InfluenceMode = s.mode().as_deref().unwrap_or("sample").parse()?;
    let constants =
        TrainingConstants::new(s.epochs().unwrap_or(model.epochs_trained()), s.eta().unwrap_or(model.learning_rate()))?;
    let k = s.k().unwrap_or(10);
    if k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let start = Instant::now();
    let result: InfluenceResult = if exact {
        let data = read_dataset(input(s.dataset(), "dataset")?)?;
        exact_influence_oracle(&model, &data, &sample, constants, mode, q.query_token, DEFAULT_ORACLE_BUDGET)?
    } else {
        let path = input(s.cache(), "cache")?;
        let spec = SketchSpec::load(spec_path(&path))?;
        let store = CacheStore::open(&path, spec.id(), spec.k(), OpenMode::Read)?;
        let built = InfluenceQuery::build(&model, &sample, &spec, mode, q.query_token, constants)?;
        rank_topk(&built, &store, k)?
    };
    let elapsed = start.elapsed();
    if k > result.len() {
        eprintln!("warning: k={k} exceeds the {} scored entries; writing the full ranking", result.len());
    }
    match s.out() {
        Some(out) => {
            result.write(&out, k)?;
            eprintln!("wrote {} to {}", if exact { "oracle ranking" } else { "ranking" }, out.display());
        }
        None => print!("{}", result.to_text(k)),
    }
    eprintln!("scored {} entries in mode {mode}", result.len());
    eprintln!("time {} {:.3}s", if exact { "oracle" } else { "query" }, elapsed.as_secs_f64());
    Ok(())
}

fn apply_sketch(s: &Settings, sketch: &mut SketchSettings, lossless: bool) {
    if lossless {
        *sketch = SketchSettings { k: None, k_divisor: 1, ..sketch.clone() };
    }
    if let Some(k) = s.sketch_k() {
        sketch.k = Some(k);
    }
    sketch.lambda = s.lambda().unwrap_or(sketch.lambda);
    sketch.seed = s.seed().unwrap_or(sketch.seed);
}

fn eval(s: &Settings, protocol: Protocol, queries: Option<usize>, lossless: bool) -> Result<()> {
    let out = required(s.out(), "out")?;
    let work = out.join("work");
    let (outcome, name): (EvalOutcome, &str) = match protocol {
        Protocol::Fidelity => {
            let mut cfg = s.file.fidelity.clone().unwrap_or_default();
            apply_sketch(s, &mut cfg.sketch, lossless);
            cfg.queries = queries.unwrap_or(cfg.queries);
            cfg.top_k = s.k().unwrap_or(cfg.top_k);
            (fidelity_eval(&cfg, &work)?, "fidelity")
        }
        Protocol::Backdoor => {
            let mut cfg = s.file.backdoor.clone().unwrap_or_default();
            apply_sketch(s, &mut cfg.sketch, lossless);
            cfg.queries = queries.unwrap_or(cfg.queries);
            (backdoor_eval(&cfg, &work)?, "backdoor")
        }
        Protocol::ErrorTracing => {
            let mut cfg = s.file.error_tracing.clone().unwrap_or_default();
            apply_sketch(s, &mut cfg.sketch, lossless);
            cfg.queries = queries.unwrap_or(cfg.queries);
            (error_tracing_eval(&cfg, &work)?, "error-tracing")
        }
    };
    outcome.write_all(&out, &format!("{name}-report.txt"))?;
    let timings: String =
        outcome.timings.iter().map(|(stage, d)| format!("{stage} {:.6}\n", d.as_secs_f64())).collect();
    std::fs::write(out.join(format!("{name}-timings.txt")), &timings)?;

    let width = outcome.report.metrics.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    println!("{name}");
    for (k, v) in &outcome.report.metrics {
        println!("  {k:<width$}  {v:.4}");
    }
    for (stage, d) in &outcome.timings {
        eprintln!("time {stage} {:.3}s", d.as_secs_f64());
    }
    eprintln!("wrote report and {} result files to {}", outcome.results.len(), out.display());
    Ok(())
}

fn bench(s: &Settings, cfg: &BenchConfig, work_dir: Option<PathBuf>) -> Result<()> {
    let (work, scratch) = match work_dir {
        Some(w) => (w, false),
        None => (std::env::temp_dir().join(format!("gradtrace-bench-{}", std::process::id())), true),
    };
    let report = retrieval_bench(cfg, &work);
    if scratch {
        let _ = std::fs::remove_dir_all(&work);
    }
    let report = report?;
    let text = report.to_text();
    print!("{text}");
    if let Some(out) = s.out() {
        std::fs::write(&out, &text)?;
        eprintln!("wrote bench table to {}", out.display());
    }
    Ok(())
}
