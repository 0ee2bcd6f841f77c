//! Group-relative advantages, token broadcast, and per-task normalization.

use std::collections::HashMap;

use super::error::AlgoError;
use crate::domain::TrajectoryGroup;

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mut mean = values.iter().sum::<f64>() / n;
    // one refinement pass keeps the mean exact to rounding for wide ranges
    mean += values.iter().map(|v| v - mean).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(R_g - mean) / max(std, var_floor)` over one group, population std.
pub fn grpo_group_advantage(returns: &[f64], var_floor: f64) -> Result<Vec<f64>, AlgoError> {
    if returns.len() < 2 {
        return Err(AlgoError::GroupTooSmall(returns.len()));
    }
    let (mean, std) = mean_std(returns);
    let scale = std.max(var_floor);
    Ok(returns.iter().map(|r| (r - mean) / scale).collect())
}

/// One token-level advantage. `group` is the position of the trajectory
/// group inside the batch, so two groups of the same sample never collide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvEntry {
    pub task: u32,
    pub group: u32,
    pub sample: u64,
    pub traj: u32,
    pub step: u32,
    pub token: u32,
    pub value: f64,
}

/// Token-level advantages for a batch, indexed (task, group, trajectory,
/// step, token). Entries are kept in that lexicographic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdvantageBatch {
    tasks: Vec<String>,
    groups: u32,
    entries: Vec<AdvEntry>,
}

impl AdvantageBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[AdvEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn group_count(&self) -> u32 {
        self.groups
    }

    pub fn task_index(&self, task_id: &str) -> Option<u32> {
        self.tasks.iter().position(|t| t == task_id).map(|i| i as u32)
    }

    fn intern(&mut self, task_id: &str) -> u32 {
        match self.task_index(task_id) {
            Some(i) => i,
            None => {
                self.tasks.push(task_id.to_string());
                (self.tasks.len() - 1) as u32
            }
        }
    }

    /// Appends `other`, renumbering its groups after ours.
    pub fn extend(&mut self, other: AdvantageBatch) {
        let offset = self.groups;
        let remap: Vec<u32> = other.tasks.iter().map(|t| self.intern(t)).collect();
        self.entries.extend(other.entries.into_iter().map(|mut e| {
            e.task = remap[e.task as usize];
            e.group += offset;
            e
        }));
        self.groups += other.groups;
    }

    /// Values of one task, in entry order.
    pub fn task_values(&self, task: u32) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.task == task)
            .map(|e| e.value)
            .collect()
    }

    /// `(mean, std)` of each task's token advantages, in task order.
    pub fn task_stats(&self) -> Vec<(String, f64, f64)> {
        (0..self.tasks.len() as u32)
            .map(|i| {
                let (m, s) = mean_std(&self.task_values(i));
                (self.tasks[i as usize].clone(), m, s)
            })
            .collect()
    }

    /// Per-trajectory token advantages, `[group][traj][step][token]`.
    pub fn nested(&self) -> HashMap<(u32, u32, u32, u32), f64> {
        self.entries
            .iter()
            .map(|e| ((e.group, e.traj, e.step, e.token), e.value))
            .collect()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.value).sum()
    }

    /// True when no index tuple repeats.
    pub fn indices_unique(&self) -> bool {
        let mut keys: Vec<_> = self
            .entries
            .iter()
            .map(|e| (e.task, e.group, e.traj, e.step, e.token))
            .collect();
        let n = keys.len();
        keys.sort_unstable();
        keys.dedup();
        keys.len() == n
    }

    /// Builds a batch directly from `(task, value)` pairs, one pseudo-token
    /// per value. Useful for exercising normalization without trajectories.
    pub fn from_task_values<'a>(values: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        let mut batch = AdvantageBatch::new();
        batch.groups = 1;
        for (i, (task, v)) in values.into_iter().enumerate() {
            let task = batch.intern(task);
            batch.entries.push(AdvEntry {
                task,
                group: 0,
                sample: 0,
                traj: 0,
                step: 0,
                token: i as u32,
                value: v,
            });
        }
        batch
    }
}

/// Gives every token of trajectory `g` the advantage `traj_advantages[g]`.
pub fn broadcast_to_tokens(
    group: &TrajectoryGroup,
    traj_advantages: &[f64],
) -> Result<AdvantageBatch, AlgoError> {
    if traj_advantages.len() != group.trajectories.len() {
        return Err(AlgoError::LengthMismatch {
            expected: group.trajectories.len(),
            got: traj_advantages.len(),
        });
    }
    let mut batch = AdvantageBatch::new();
    let task = batch.intern(&group.task_id);
    batch.groups = 1;
    for (g, (traj, &adv)) in group.trajectories.iter().zip(traj_advantages).enumerate() {
        for (t, step) in traj.steps.iter().enumerate() {
            for k in 0..step.action.tokens.len() {
                batch.entries.push(AdvEntry {
                    task,
                    group: 0,
                    sample: group.sample_id,
                    traj: g as u32,
                    step: t as u32,
                    token: k as u32,
                    value: adv,
                });
            }
        }
    }
    Ok(batch)
}

/// Standardizes token advantages within each task independently:
/// `(A - mean_i) / max(std_i, var_floor)`.
pub fn task_advantage_normalize(batch: &AdvantageBatch, var_floor: f64) -> AdvantageBatch {
    let mut stats = vec![(0.0, 1.0); batch.tasks.len()];
    for (i, s) in stats.iter_mut().enumerate() {
        let (m, sd) = mean_std(&batch.task_values(i as u32));
        *s = (m, sd.max(var_floor));
    }
    let mut out = batch.clone();
    for e in &mut out.entries {
        let (m, sd) = stats[e.task as usize];
        e.value = (e.value - m) / sd;
    }
    out
}

/// Full advantage path for a training batch: GRPO per group, broadcast to
/// tokens, then (when `task_norm`) standardization within each task. Group
/// `g` of the result is `groups[g]`.
pub fn compose_advantages(
    groups: &[TrajectoryGroup],
    var_floor: f64,
    task_norm: bool,
) -> Result<AdvantageBatch, AlgoError> {
    if groups.is_empty() {
        return Err(AlgoError::EmptyBatch);
    }
    let mut batch = AdvantageBatch::new();
    for group in groups {
        let adv = grpo_group_advantage(&group.returns(), var_floor)?;
        batch.extend(broadcast_to_tokens(group, &adv)?);
    }
    Ok(if task_norm {
        task_advantage_normalize(&batch, var_floor)
    } else {
        batch
    })
}

/// Generalized advantage estimation over one episode. `values` holds
/// `V(s_0) ..= V(s_T)`; pass `V(s_T) = 0` for a terminal state.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, AlgoError> {
    if values.len() != rewards.len() + 1 {
        return Err(AlgoError::LengthMismatch {
            expected: rewards.len() + 1,
            got: values.len(),
        });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    Ok(adv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::trajectory::fixtures::*;
    use crate::domain::{TerminalStatus, Trajectory};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn grpo_examples() {
        assert!(close(
            &grpo_group_advantage(&[1.0, 0.0, 0.0, 1.0], 1e-6).unwrap(),
            &[1.0, -1.0, -1.0, 1.0],
            1e-12
        ));
        assert_eq!(grpo_group_advantage(&[1.0; 4], 1e-6).unwrap(), vec![0.0; 4]);
        assert!(close(&grpo_group_advantage(&[1.0, 0.0], 1e-6).unwrap(), &[1.0, -1.0], 1e-12));
        assert_eq!(grpo_group_advantage(&[1.0], 1e-6), Err(AlgoError::GroupTooSmall(1)));
    }

    fn traj_with_tokens(n: usize) -> Trajectory {
        // one step per token keeps the fixture simple
        let steps = (0..n).map(|i| step(vec![0; i + 1], vec![2], 0.0)).collect();
        traj(steps, TerminalStatus::Completed, 1.0)
    }

    #[test]
    fn broadcast_example() {
        let mut group = TrajectoryGroup::new("bisect", 0, 0);
        group.trajectories = vec![traj_with_tokens(3), traj_with_tokens(5)];
        let b = broadcast_to_tokens(&group, &[1.0, -1.0]).unwrap();
        assert_eq!(b.len(), 8);
        let vals: Vec<f64> = b.entries().iter().map(|e| e.value).collect();
        assert_eq!(vals, [1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0]);
        assert!(b.indices_unique());
        assert!(matches!(
            broadcast_to_tokens(&group, &[1.0]),
            Err(AlgoError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn broadcast_empty_trajectory() {
        let mut group = TrajectoryGroup::new("bisect", 0, 0);
        group.trajectories = vec![traj_with_tokens(0), traj_with_tokens(2)];
        let b = broadcast_to_tokens(&group, &[5.0, 1.0]).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.entries().iter().all(|e| e.traj == 1));
    }

    #[test]
    fn normalize_examples() {
        let b = AdvantageBatch::from_task_values([("a", 1.0), ("a", 2.0), ("a", 3.0)]);
        let n = task_advantage_normalize(&b, 1e-6);
        let vals: Vec<f64> = n.entries().iter().map(|e| e.value).collect();
        let s = (1.5f64).sqrt(); // 1 / sqrt(2/3)
        assert!(close(&vals, &[-s, 0.0, s], 1e-12));
        assert!((s - 1.2247).abs() < 1e-4);

        let b = AdvantageBatch::from_task_values([("a", 3.5)]);
        assert_eq!(task_advantage_normalize(&b, 1e-6).entries()[0].value, 0.0);

        let b = AdvantageBatch::from_task_values([("A", 2.0), ("B", -10.0), ("A", 4.0), ("B", 10.0)]);
        let n = task_advantage_normalize(&b, 1e-6);
        let vals: Vec<f64> = n.entries().iter().map(|e| e.value).collect();
        assert!(close(&vals, &[-1.0, -1.0, 1.0, 1.0], 1e-12));
    }

    #[test]
    fn extend_renumbers() {
        let mut a = AdvantageBatch::from_task_values([("x", 1.0)]);
        let b = AdvantageBatch::from_task_values([("y", 2.0), ("x", 3.0)]);
        a.extend(b);
        assert_eq!(a.tasks(), ["x", "y"]);
        assert_eq!(a.group_count(), 2);
        assert_eq!(a.task_values(0), vec![1.0, 3.0]);
        assert!(a.indices_unique());
    }

    #[test]
    fn gae_examples() {
        assert_eq!(gae(&[1.0], &[0.0, 0.0], 1.0, 0.0).unwrap(), vec![1.0]);
        assert_eq!(gae(&[0.0, 1.0], &[0.0, 0.0, 0.0], 1.0, 1.0).unwrap(), vec![1.0, 1.0]);
        let a = gae(&[0.0, 1.0], &[0.5, 0.5, 0.0], 0.9, 0.95).unwrap();
        assert!(close(&a, &[0.3775, 0.5], 1e-12), "{a:?}");
        assert!(gae(&[0.0], &[0.0], 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn grpo_sums_to_zero_and_is_shift_invariant(
            returns in prop::collection::vec(-5.0f64..5.0, 2..16),
            shift in -100.0f64..100.0,
        ) {
            let a = grpo_group_advantage(&returns, 1e-6).unwrap();
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
            let shifted: Vec<f64> = returns.iter().map(|r| r + shift).collect();
            let b = grpo_group_advantage(&shifted, 1e-6).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn gae_unit_params_is_reward_to_go(rewards in prop::collection::vec(-3.0f64..3.0, 1..20)) {
            let values = vec![0.0; rewards.len() + 1];
            let a = gae(&rewards, &values, 1.0, 1.0).unwrap();
            for t in 0..rewards.len() {
                let rtg: f64 = rewards[t..].iter().sum();
                prop_assert!((a[t] - rtg).abs() < 1e-9);
            }
        }

        #[test]
        fn normalize_is_per_task_monotone_and_scale_free(
            vals in prop::collection::vec((0usize..3, -10.0f64..10.0), 1..200),
            scale in 0.01f64..100.0,
        ) {
            let names = ["a", "b", "c"];
            let batch = AdvantageBatch::from_task_values(vals.iter().map(|(t, v)| (names[*t], *v)));
            let out = task_advantage_normalize(&batch, 1e-6);
            for task in 0..batch.tasks().len() as u32 {
                let before = batch.task_values(task);
                let after = out.task_values(task);
                let (m, s) = mean_std(&after);
                prop_assert!(m.abs() < 1e-9);
                let (_, s_in) = mean_std(&before);
                if s_in * s_in > 1e-6 {
                    prop_assert!((s - 1.0).abs() < 1e-6);
                }
                for i in 0..before.len() {
                    for j in 0..before.len() {
                        if before[i] < before[j] {
                            prop_assert!(after[i] < after[j]);
                        }
                    }
                }
            }
            // scaling one task leaves its normalized values unchanged
            let scaled = AdvantageBatch::from_task_values(vals.iter().map(|(t, v)| {
                (names[*t], if *t == 0 { v * scale } else { *v })
            }));
            let out2 = task_advantage_normalize(&scaled, 1e-6);
            if let (Some(i), Some(j)) = (batch.task_index("a"), scaled.task_index("a")) {
                let (_, s_in) = mean_std(&batch.task_values(i));
                if s_in * s_in > 1e-6 && (s_in * scale).powi(2) > 1e-6 {
                    for (x, y) in out.task_values(i).iter().zip(out2.task_values(j)) {
                        prop_assert!((x - y).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
