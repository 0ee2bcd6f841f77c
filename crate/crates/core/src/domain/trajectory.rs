//! Composite states, steps, trajectories and groups.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::grammar::Decoding;
use super::tool::ToolCall;
use super::vocab::TokenId;

/// Identifies the policy snapshot that emitted a step: a lineage (one
/// training run, or one hand-built policy) and its weights version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PolicyId {
    pub lineage: u32,
    pub version: u64,
}

impl PolicyId {
    pub const fn new(lineage: u32, version: u64) -> Self {
        PolicyId { lineage, version }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@v{}", self.lineage, self.version)
    }
}

/// Environment handle plus the tokenized interaction context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeState {
    pub env_handle: String,
    pub ctx_tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub tokens: Vec<TokenId>,
    /// `None` when the tokens do not decode to any call of the task.
    pub call: Option<ToolCall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: CompositeState,
    pub action: Action,
    pub reward: f64,
    pub token_logprobs: Vec<f64>,
    pub behavior_policy: PolicyId,
}

impl StepRecord {
    pub fn action_logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    Completed,
    TaskLimitReached,
    LengthLimit,
    ProtocolError,
    EnvError,
}

impl TerminalStatus {
    /// Abnormal endings are penalized; `EnvError` is an infrastructure fault
    /// and is discarded rather than scored.
    pub fn is_abnormal(self) -> bool {
        matches!(
            self,
            TerminalStatus::TaskLimitReached | TerminalStatus::LengthLimit | TerminalStatus::ProtocolError
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TerminalStatus::Completed => "completed",
            TerminalStatus::TaskLimitReached => "task_limit_reached",
            TerminalStatus::LengthLimit => "length_limit",
            TerminalStatus::ProtocolError => "protocol_error",
            TerminalStatus::EnvError => "env_error",
        }
    }
}

impl fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub sample_id: u64,
    pub steps: Vec<StepRecord>,
    pub terminal_status: TerminalStatus,
    pub final_reward: f64,
    #[serde(default)]
    pub decoding: Decoding,
}

impl Trajectory {
    pub fn token_count(&self) -> usize {
        self.steps.iter().map(|s| s.action.tokens.len()).sum()
    }

    /// Completed with full unified reward.
    pub fn is_success(&self) -> bool {
        self.terminal_status == TerminalStatus::Completed && self.final_reward >= 1.0 - 1e-12
    }

    /// Oldest weights version among the steps of `lineage`, if any.
    pub fn min_behavior_version(&self) -> Option<u64> {
        self.steps.iter().map(|s| s.behavior_policy.version).min()
    }
}

/// Undiscounted return: step rewards plus the final unified reward.
pub fn trajectory_return(traj: &Trajectory) -> f64 {
    traj.steps.iter().map(|s| s.reward).sum::<f64>() + traj.final_reward
}

/// The K rollouts of one task sample that GRPO compares against each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGroup {
    pub task_id: String,
    pub sample_id: u64,
    pub trajectories: Vec<Trajectory>,
    /// Weights version of the fresh policy when the group was started.
    pub weights_version: u64,
}

impl TrajectoryGroup {
    pub fn new(task_id: impl Into<String>, sample_id: u64, weights_version: u64) -> Self {
        TrajectoryGroup {
            task_id: task_id.into(),
            sample_id,
            trajectories: Vec::new(),
            weights_version,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(trajectory_return).collect()
    }

    /// Group members agree on task and sample.
    pub fn is_consistent(&self) -> bool {
        !self.trajectories.is_empty()
            && self
                .trajectories
                .iter()
                .all(|t| t.task_id == self.task_id && t.sample_id == self.sample_id)
    }

    pub fn token_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::token_count).sum()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn step(ctx: Vec<TokenId>, tokens: Vec<TokenId>, reward: f64) -> StepRecord {
        let n = tokens.len();
        StepRecord {
            state: CompositeState {
                env_handle: "s-1".into(),
                ctx_tokens: ctx,
            },
            action: Action { tokens, call: None },
            reward,
            token_logprobs: vec![-0.5; n],
            behavior_policy: PolicyId::new(0, 0),
        }
    }

    pub fn traj(steps: Vec<StepRecord>, status: TerminalStatus, final_reward: f64) -> Trajectory {
        Trajectory {
            task_id: "bisect".into(),
            sample_id: 0,
            steps,
            terminal_status: status,
            final_reward,
            decoding: Decoding::Constrained,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn sparse_terminal_return() {
        let t = traj(
            vec![step(vec![0], vec![2, 9], 0.0), step(vec![0, 2, 9, 1], vec![2, 9], 0.0)],
            TerminalStatus::Completed,
            1.0,
        );
        assert_eq!(trajectory_return(&t), 1.0);
    }

    #[test]
    fn abnormal_penalty_return() {
        let t = traj(vec![], TerminalStatus::TaskLimitReached, -0.2);
        assert_eq!(trajectory_return(&t), -0.2);
    }

    #[test]
    fn intermediate_rewards_sum() {
        let t = traj(
            vec![step(vec![0], vec![2], 0.1), step(vec![0, 2, 1], vec![2], 0.2)],
            TerminalStatus::Completed,
            0.5,
        );
        assert!((trajectory_return(&t) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn status_strings() {
        for (s, name) in [
            (TerminalStatus::Completed, "\"completed\""),
            (TerminalStatus::TaskLimitReached, "\"task_limit_reached\""),
            (TerminalStatus::LengthLimit, "\"length_limit\""),
            (TerminalStatus::ProtocolError, "\"protocol_error\""),
            (TerminalStatus::EnvError, "\"env_error\""),
        ] {
            assert_eq!(serde_json::to_string(&s).unwrap(), name);
            assert_eq!(format!("\"{s}\""), name);
        }
        assert!(!TerminalStatus::Completed.is_abnormal());
        assert!(!TerminalStatus::EnvError.is_abnormal());
        assert!(TerminalStatus::LengthLimit.is_abnormal());
    }
}
