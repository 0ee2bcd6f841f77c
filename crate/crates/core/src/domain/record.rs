//! One-JSON-object-per-line trajectory log.

use serde::{Deserialize, Serialize};

use super::trajectory::{PolicyId, TerminalStatus, Trajectory, TrajectoryGroup};
use super::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub ctx_len: usize,
    pub action_tokens: Vec<TokenId>,
    pub reward: f64,
    pub logprobs: Vec<f64>,
    pub policy_id: PolicyId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub task_id: String,
    pub sample_id: u64,
    pub traj_index: usize,
    pub steps: Vec<StepLine>,
    pub terminal_status: TerminalStatus,
    pub final_reward: f64,
    pub weights_version: u64,
}

impl TrajectoryLine {
    pub fn new(traj: &Trajectory, traj_index: usize, weights_version: u64) -> Self {
        TrajectoryLine {
            task_id: traj.task_id.clone(),
            sample_id: traj.sample_id,
            traj_index,
            steps: traj
                .steps
                .iter()
                .map(|s| StepLine {
                    ctx_len: s.state.ctx_tokens.len(),
                    action_tokens: s.action.tokens.clone(),
                    reward: s.reward,
                    logprobs: s.token_logprobs.clone(),
                    policy_id: s.behavior_policy,
                })
                .collect(),
            terminal_status: traj.terminal_status,
            final_reward: traj.final_reward,
            weights_version,
        }
    }

    pub fn from_group(group: &TrajectoryGroup) -> impl Iterator<Item = TrajectoryLine> + '_ {
        group
            .trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| TrajectoryLine::new(t, i, group.weights_version))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::trajectory::fixtures::*;

    #[test]
    fn field_names() {
        let t = traj(vec![step(vec![0, 4], vec![6, 9], 0.0)], TerminalStatus::Completed, 1.0);
        let line = serde_json::to_value(TrajectoryLine::new(&t, 3, 17)).unwrap();
        let obj = line.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "final_reward",
                "sample_id",
                "steps",
                "task_id",
                "terminal_status",
                "traj_index",
                "weights_version"
            ]
        );
        let step = obj["steps"][0].as_object().unwrap();
        let mut keys: Vec<_> = step.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["action_tokens", "ctx_len", "logprobs", "policy_id", "reward"]);
        assert_eq!(obj["steps"][0]["ctx_len"], 2);
        assert_eq!(obj["terminal_status"], "completed");
        assert_eq!(obj["weights_version"], 17);
    }
}
