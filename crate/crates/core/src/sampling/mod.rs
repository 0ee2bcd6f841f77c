//! Rollout strategies, the policy pool, balanced task interleaving, and
//! pass@k estimation.

pub mod balanced;
pub mod error;
pub mod passk;
pub mod pool;
pub mod reference;
pub mod rollout;
pub mod study;

pub use balanced::{balanced_task_iterator, BalancedTaskIter};
pub use error::SamplingError;
pub use passk::{mean_pass_at_k, pass_at_k};
pub use pool::{stale_refresh_due, PolicyPool};
pub use rollout::{
    cross_policy_rollout, mix_rollout, rollout_with, single_rollout, Episode, Interrupted, RolloutStrategy,
    StrategyKind,
};
pub use study::{collect_counts, StudyCounts, StudyRow, StudySetup};
