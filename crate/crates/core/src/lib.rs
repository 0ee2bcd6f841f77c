//! Asynchronous multi-turn, multi-task reinforcement learning at desk scale.
//!
//! Small linear-softmax policies stand in for language models. They act
//! through tool calls against toy environments served by a controller, and
//! are trained with GRPO plus per-task advantage normalization by an
//! asynchronous rollout/training pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod algorithms;
pub mod domain;
pub mod envs;
pub mod sampling;
pub mod pipeline;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/rollouts.md")]
    mod rollouts {}
    #[doc = include_str!("../../../book/src/advantages.md")]
    mod advantages {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
