//! One training update: advantages, surrogate gradient, weight step.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::algorithms::{
    compose_advantages, dapo_dynamic_filter, mean_std, surrogate_gradient, AlgoError, HyperParams,
    LinearSoftmaxPolicy, ObjectiveKind, OptimizerState, SurrogateBatch,
};
use crate::domain::{TaskSpec, TerminalStatus, TrajectoryGroup};

/// A queued group and the fresh weights version when it was started.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuedGroup {
    pub group: TrajectoryGroup,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("empty training batch")]
    EmptyBatch,
    #[error(transparent)]
    Algo(#[from] AlgoError),
    #[error("non-finite {what} at update {step}")]
    NonFinite { what: &'static str, step: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TaskStepStats {
    pub groups: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub adv_mean: f64,
    pub adv_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub objective: f64,
    pub kl: f64,
    pub tokens: usize,
    pub groups: usize,
    pub dropped_stale: usize,
    pub dropped_filter: usize,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub max_staleness: u64,
    pub mean_staleness: f64,
    pub tasks: BTreeMap<String, TaskStepStats>,
}

pub struct Trainer {
    policy: Arc<LinearSoftmaxPolicy>,
    hp: HyperParams,
    specs: Vec<TaskSpec>,
    /// Groups whose oldest behavior step lags the trainer by more than this
    /// many versions are dropped.
    max_staleness: u64,
    optim: OptimizerState,
}

impl Trainer {
    pub fn new(policy: LinearSoftmaxPolicy, hp: HyperParams, specs: Vec<TaskSpec>, max_staleness: u64) -> Self {
        Trainer {
            policy: Arc::new(policy),
            optim: OptimizerState::new(hp.optimizer),
            hp,
            specs,
            max_staleness,
        }
    }

    pub fn policy(&self) -> &Arc<LinearSoftmaxPolicy> {
        &self.policy
    }

    pub fn version(&self) -> u64 {
        self.policy.version()
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hp
    }

    /// Runs one update on `batch` and returns its metrics. The policy
    /// version increments even when nothing survives filtering.
    pub fn training_step(&mut self, batch: Vec<QueuedGroup>) -> Result<StepMetrics, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let version = self.policy.version();
        let step = version + 1;
        let mut m = StepMetrics {
            step,
            ..StepMetrics::default()
        };
        let mut groups = Vec::with_capacity(batch.len());
        let mut lags = Vec::new();
        for q in batch {
            let oldest = q
                .group
                .trajectories
                .iter()
                .filter_map(|t| t.min_behavior_version())
                .min()
                .unwrap_or(q.version);
            let lag = version.saturating_sub(oldest.min(q.version));
            if lag > self.max_staleness {
                m.dropped_stale += 1;
                continue;
            }
            lags.push(lag);
            groups.push(q.group);
        }
        m.max_staleness = lags.iter().copied().max().unwrap_or(0);
        m.mean_staleness = if lags.is_empty() {
            0.0
        } else {
            lags.iter().sum::<u64>() as f64 / lags.len() as f64
        };
        // env faults are discarded rather than scored
        for g in &mut groups {
            g.trajectories.retain(|t| t.terminal_status != TerminalStatus::EnvError);
        }
        groups.retain(|g| g.trajectories.len() >= 2);
        for g in &groups {
            let s = m.tasks.entry(g.task_id.clone()).or_default();
            s.groups += 1;
            let n = g.trajectories.len() as f64;
            s.mean_return += g.returns().iter().sum::<f64>() / n;
            s.success_rate += g.trajectories.iter().filter(|t| t.is_success()).count() as f64 / n;
        }
        for s in m.tasks.values_mut() {
            s.mean_return /= s.groups as f64;
            s.success_rate /= s.groups as f64;
        }
        if self.hp.objective == ObjectiveKind::Dapo {
            let before = groups.len();
            groups = dapo_dynamic_filter(groups, |t| t.is_success());
            m.dropped_filter = before - groups.len();
        }
        m.groups = groups.len();
        let mut next = (*self.policy).clone();
        if !groups.is_empty() {
            let adv = compose_advantages(&groups, self.hp.var_floor, self.hp.task_norm)?;
            for (task, mean, std) in adv.task_stats() {
                let s = m.tasks.entry(task).or_default();
                s.adv_mean = mean;
                s.adv_std = std;
            }
            let sb = SurrogateBatch::from_trajectories(self.policy.feature_config(), &groups, &adv, &self.specs)?;
            m.tokens = sb.token_count();
            let (grad, stats) = surrogate_gradient(&self.policy, &sb, &self.hp)?;
            m.objective = stats.objective;
            m.kl = stats.kl;
            m.clip_fraction = stats.clip_fraction;
            m.grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !m.grad_norm.is_finite() || !m.objective.is_finite() {
                return Err(TrainError::NonFinite { what: "gradient", step });
            }
            self.optim.apply(&mut next, &grad, self.hp.learning_rate);
        } else {
            next = next.with_version(step);
        }
        if !next.is_finite() {
            return Err(TrainError::NonFinite { what: "weights", step });
        }
        self.policy = Arc::new(next);
        Ok(m)
    }
}

/// Mean and population std of per-task values, for across-task spread.
pub fn across_task_spread(values: &[f64]) -> (f64, f64) {
    mean_std(values)
}
