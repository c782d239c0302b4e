//! Verification protocols and ranking metrics.

pub mod corpus;
pub mod metrics;
pub mod perturb;
pub mod poison;
pub mod protocol;

pub use corpus::{synthetic_corpus, CorpusConfig};
pub use metrics::{agreement_stats, ap_at_k, auprc, auroc, auroc_mann_whitney, spearman, topk_overlap, Agreement};
pub use perturb::{perturb_entities, PerturbConfig};
pub use poison::{poison_count, poison_dataset, PoisonConfig};
pub use protocol::{
    backdoor_eval, error_tracing_eval, fidelity_eval, BackdoorConfig, ErrorTracingConfig, EvalOutcome, EvalReport,
    FidelityConfig, SketchSettings,
};
