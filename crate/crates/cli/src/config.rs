//! Optional TOML run file. Command-line flags override its values.
//!
//! ```toml
//! dataset = "train.jsonl"
//! model = "model.gtm"
//! cache = "cache.gtc"
//! K = 2048
//! lambda = 20
//! seed = 9
//! workers = 4
//! mode = "sample"
//! k = 10
//!
//! [backdoor]
//! queries = 10
//! ```

use std::path::{Path, PathBuf};

use gradtrace::bench::BenchConfig;
use gradtrace::eval::{BackdoorConfig, ErrorTracingConfig, FidelityConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    #[serde(rename = "K")]
    pub sketch_k: Option<u64>,
    pub lambda: Option<u32>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub mode: Option<String>,
    pub eta: Option<f64>,
    pub epochs: Option<u64>,
    pub train: Option<TrainSection>,
    pub fidelity: Option<FidelityConfig>,
    pub backdoor: Option<BackdoorConfig>,
    pub error_tracing: Option<ErrorTracingConfig>,
    pub bench: Option<BenchConfig>,
}

/// Model shape and optimizer settings for `train`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub vocab_size: Option<usize>,
    pub context_window: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub batch_size: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}
