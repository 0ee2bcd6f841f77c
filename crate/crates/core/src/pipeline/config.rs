//! Run configuration: one JSON document with every default filled in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::{FeatureConfig, HyperParams};
use crate::envs::TaskRegistry;
use crate::sampling::StrategyKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Async,
    Sync,
}

/// How engines and trainer are scheduled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Runtime {
    /// Discrete-event schedule on a virtual clock. Deterministic for any
    /// number of engines.
    #[default]
    Simulated,
    /// One OS thread per engine plus the trainer on the calling thread.
    Threaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_engines: usize,
    pub b_min: usize,
    pub b_max: usize,
    pub q_max: usize,
    pub k_stale: u64,
    pub group_size: usize,
    pub temperature: f64,
    pub mode: Mode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_engines: 8,
            b_min: 4,
            b_max: 16,
            q_max: 32,
            k_stale: 4,
            group_size: 8,
            temperature: 0.8,
            mode: Mode::Async,
        }
    }
}

impl PipelineConfig {
    /// Oldest behavior version the trainer can see at update `v` is
    /// `v - staleness_bound()`.
    pub fn staleness_bound(&self) -> u64 {
        (self.q_max as u64).div_ceil(self.b_min as u64) + self.k_stale
    }
}

/// Synthetic timing for the simulated runtime. Episode durations are
/// lognormal with the given median and log-space sigma; a group finishes
/// when its slowest episode does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DurationModel {
    pub episode_median_s: f64,
    pub sigma: f64,
    pub train_step_s: f64,
}

impl Default for DurationModel {
    fn default() -> Self {
        DurationModel {
            episode_median_s: 1.0,
            sigma: 1.0,
            train_step_s: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate every this many updates; 0 disables periodic evaluation.
    pub every: u64,
    pub samples: u64,
    pub repeats: usize,
    pub temperature: f64,
    /// Evaluation sample ids start here, away from the training range.
    pub first_sample: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            every: 50,
            samples: 50,
            repeats: 4,
            temperature: 0.8,
            first_sample: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub hp: HyperParams,
    pub features: FeatureConfig,
    pub tasks: Vec<String>,
    /// Training sample ids per task are `0..train_samples`.
    pub train_samples: u64,
    pub seed: u64,
    pub steps: u64,
    pub strategy: StrategyKind,
    pub disable_task_norm: bool,
    pub disable_cross_policy: bool,
    pub runtime: Runtime,
    pub durations: DurationModel,
    pub eval: EvalConfig,
    pub controller_workers: usize,
    pub worker_capacity: usize,
    pub write_trajectories: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            hp: HyperParams::default(),
            features: FeatureConfig::default(),
            tasks: vec!["bisect".into(), "kvstore".into(), "gridtext".into()],
            train_samples: 1000,
            seed: 0,
            steps: 300,
            strategy: StrategyKind::Cross,
            disable_task_norm: false,
            disable_cross_policy: false,
            runtime: Runtime::Simulated,
            durations: DurationModel::default(),
            eval: EvalConfig::default(),
            controller_workers: 2,
            worker_capacity: 256,
            write_trajectories: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config parse: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hyperparameters actually used: group size and temperature come from
    /// the pipeline section, and `disable_task_norm` turns normalization off.
    pub fn effective_hp(&self) -> HyperParams {
        let mut hp = self.hp.clone();
        hp.group_size = self.pipeline.group_size;
        hp.temperature = self.pipeline.temperature;
        hp.task_norm = hp.task_norm && !self.disable_task_norm;
        hp
    }

    pub fn effective_strategy(&self) -> StrategyKind {
        if self.disable_cross_policy && self.strategy == StrategyKind::Cross {
            StrategyKind::Single
        } else {
            self.strategy
        }
    }

    pub fn validate(&self, registry: &TaskRegistry) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let p = &self.pipeline;
        if p.n_engines < 1 {
            return bad("pipeline.n_engines must be at least 1");
        }
        if !(1 <= p.b_min && p.b_min <= p.b_max && p.b_max <= p.q_max) {
            return bad("need 1 <= b_min <= b_max <= q_max");
        }
        if p.k_stale < 1 {
            return bad("pipeline.k_stale must be at least 1");
        }
        if self.steps < 1 {
            return bad("steps must be at least 1");
        }
        if self.tasks.is_empty() {
            return bad("tasks must not be empty");
        }
        for t in &self.tasks {
            if registry.get(t).is_none() {
                return Err(ConfigError::UnknownTask(t.clone()));
            }
        }
        if self.train_samples < 1 {
            return bad("train_samples must be at least 1");
        }
        if self.eval.first_sample < self.train_samples {
            return bad("eval.first_sample overlaps the training samples");
        }
        if self.eval.every > 0 && (self.eval.samples < 1 || self.eval.repeats < 1) {
            return bad("eval needs samples and repeats");
        }
        if self.strategy == StrategyKind::Mix && !p.group_size.is_multiple_of(2) {
            return bad("mix strategy needs an even group size");
        }
        if self.features.dim < 1 {
            return bad("features.dim must be positive");
        }
        let d = &self.durations;
        if !(d.episode_median_s > 0.0 && d.sigma >= 0.0 && d.train_step_s >= 0.0)
            || !(d.episode_median_s.is_finite() && d.sigma.is_finite() && d.train_step_s.is_finite())
        {
            return bad("durations must be finite with a positive median");
        }
        if self.controller_workers < 1 || self.worker_capacity < 1 {
            return bad("need at least one controller worker with capacity");
        }
        self.effective_hp()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = RunConfig::default();
        c.validate(&TaskRegistry::standard()).unwrap();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.pipeline.staleness_bound(), 8 + 4);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_json(r#"{"tasks":["bisect"],"pipeline":{"b_max":8}}"#).unwrap();
        assert_eq!(c.pipeline.b_max, 8);
        assert_eq!(c.pipeline.q_max, 32);
        assert_eq!(c.steps, 300);
    }

    #[test]
    fn rejects_bad_documents() {
        let reg = TaskRegistry::standard();
        let c = RunConfig::from_json(r#"{"tasks":["nope"]}"#).unwrap();
        assert_eq!(c.validate(&reg), Err(ConfigError::UnknownTask("nope".into())));
        let c = RunConfig::from_json(r#"{"pipeline":{"b_min":9,"b_max":8}}"#).unwrap();
        assert!(matches!(c.validate(&reg), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_json("{"), Err(ConfigError::Parse(_))));
        let c = RunConfig {
            disable_task_norm: true,
            disable_cross_policy: true,
            ..RunConfig::default()
        };
        assert!(!c.effective_hp().task_norm);
        assert_eq!(c.effective_strategy(), StrategyKind::Single);
    }
}
