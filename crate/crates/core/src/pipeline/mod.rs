//! The asynchronous rollout/training pipeline: bounded trajectory queue,
//! weight bulletin, rollout engines, trainer, and the lockstep baseline.

pub mod bulletin;
pub mod config;
pub mod engine;
pub mod events;
pub mod queue;
pub mod run;
pub mod trainer;

pub use bulletin::{BulletinError, Published, WeightsBulletin};
pub use config::{ConfigError, DurationModel, EvalConfig, Mode, PipelineConfig, RunConfig, Runtime};
pub use engine::{generate_group, group_duration, group_rng, GroupJob, GroupOutcome};
pub use events::{throughput_report, Event, EventKind, ReportError, ThroughputReport};
pub use queue::{Pulled, Push, TrajectoryQueue};
pub use run::{
    evaluate, run_sync_baseline, run_training, EvalRow, MetricsRow, NoObserver, RunError, RunObserver, RunOutcome,
};
pub use trainer::{across_task_spread, QueuedGroup, StepMetrics, TaskStepStats, TrainError, Trainer};
