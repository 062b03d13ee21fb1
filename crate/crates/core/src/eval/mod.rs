//! Candidate pools, ranking metrics and evaluation reports.

mod evaluate;
mod metrics;
mod pool;

pub use evaluate::{
    eval_instances, evaluate, instance_pool, pool_size_sweep, rank_instances, validation_instances, EvalInstance, InstanceRank,
    RankReport, Scorer, Strata, Stratum, SweepPoint,
};
pub use metrics::{metrics_at_k, mrr, rank_of_positive, Metrics};
pub use pool::{build_eval_pool, EvalPool, PoolConfig, PoolMode};
