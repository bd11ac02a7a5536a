//! Synthetic benchmark: the StageChain task, the closed training loop and
//! the four-way ablation.

mod ablation;
mod env;
mod metrics;
mod training;

pub use ablation::{run_ablation, AblationRow, AblationTable, Estimate};
pub use env::{
    evaluate_policy, Actor, NoisyExpert, PolicyActor, StageChainConfig, StageChainEnv,
    UniformActor,
};
pub use metrics::{diversity_metric, mean_ci, median_of, redundancy_metric, DIVERSITY_JITTER};
pub use training::{
    run_e2dt_loop, run_e2dt_loop_with, select_from_pool, Bandwidth, LoopConfig, LoopObserver,
    MetricsPoint, PoolSelection, RefreshReason, RunMetrics, SelectionEvent, SelectionOptions,
    StageLabels, SubsetMetrics, Variant,
};
