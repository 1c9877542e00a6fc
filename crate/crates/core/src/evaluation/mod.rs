//! Zero-shot retrieval, episodic few-shot classification and ablations.

mod ablation;
mod fewshot;
mod report;
mod retrieval;
mod stats;

pub use ablation::{
    ablation_error_bars, ablation_table, run_ablations, train_and_evaluate, variant_means, AblationMetrics,
    AblationRun, Variant,
};
pub use fewshot::{fewshot, fewshot_protocol_name, run_episode, sample_episodes, EpisodeSpec};
pub use report::{error_bar_rows, MetricsReport};
pub use retrieval::{
    build_fixed_pool_tasks, fixed_pool_retrieval, global_retrieval, hit_at_k, rank_candidates, EmbeddingIndex,
    MoleculeTable, RetrievalTask, REPORTED_K,
};
pub use stats::{binomial_interval, mean, population_std, standard_error};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub pool_size: usize,
    pub shared_pool: bool,
    pub episodes: usize,
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pool_size: 256,
            shared_pool: false,
            episodes: 600,
            way: 5,
            shot: 5,
            queries: 5,
        }
    }
}
