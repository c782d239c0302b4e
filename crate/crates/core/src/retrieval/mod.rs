//! Influence scoring over cached sketches, and the exact oracle.

pub mod influence;
pub mod oracle;
pub mod rank;

pub use influence::{
    influence_sample, influence_sample_on_token, influence_token_on_sample, influence_token_token, InfluenceMode,
    TrainingConstants,
};
pub use oracle::{exact_influence_oracle, DEFAULT_ORACLE_BUDGET};
pub use rank::{
    parse_result_lines, rank_topk, ranking_order, score_store, InfluenceQuery, InfluenceResult, ScoredEntry,
};
