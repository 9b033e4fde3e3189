//! Answer normalization, per-query F1, run reports, and significance tests.

mod bootstrap;
mod f1;
mod normalize;
mod report;

pub use bootstrap::{bootstrap_compare, paired_diffs, BootstrapResult, DEFAULT_RESAMPLES};
pub use f1::{answer_set_f1, clarify_f1, direct_f1};
pub use normalize::{exact_match, normalize_answer, normalized_tokens};
pub use report::{
    decision_accuracies, evaluate, mean_turns, random_decision_baseline, render_table, DecisionReport, EvalReport,
    QueryScore, SplitCounts,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("episode {episode} scored against query {query}")]
    Mismatch { episode: String, query: String },
    #[error("episode {0} does not satisfy the clarify/direct shape")]
    Malformed(String),
    #[error("episode refers to unknown query {0}")]
    UnknownQuery(String),
    #[error("no greedy direct answer for query {0}")]
    MissingGreedy(String),
    #[error("paired score lists do not cover the same queries: {0}")]
    IdMismatch(String),
    #[error("empty input")]
    Empty,
}
