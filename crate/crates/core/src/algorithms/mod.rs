//! Optimization math: advantages, clipped objectives, rewards, and the
//! linear-softmax policy with its exact gradient.

pub mod advantage;
pub mod error;
pub mod gradient;
pub mod hyper;
pub mod objective;
pub mod optim;
pub mod policy;
pub mod reward;

pub use advantage::{
    broadcast_to_tokens, compose_advantages, gae, grpo_group_advantage, mean_std,
    task_advantage_normalize, AdvEntry, AdvantageBatch,
};
pub use error::AlgoError;
pub use gradient::{
    policy_gradient, surrogate, surrogate_gradient, SurrogateBatch, SurrogateStats, TokenSample,
};
pub use hyper::{HyperParams, ObjectiveKind, Optimizer};
pub use optim::OptimizerState;
pub use objective::{
    clip_term, dapo_dynamic_filter, dapo_objective, grpo_objective, ppo_clip_term,
    unclipped_branch_active, RatioAdvantage,
};
pub use policy::{
    action_logprob, log_softmax, sample_action, FeatureConfig, Features, LinearSoftmaxPolicy,
    PolicySnapshot, SampledAction,
};
pub use reward::{unified_reward, ABNORMAL_PENALTY};
