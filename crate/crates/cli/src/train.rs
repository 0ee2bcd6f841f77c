//! `train`: one run directory per invocation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use agentrl_core::envs::{Controller, ControllerConfig, Gateway, LocalWorker, SystemClock, TaskRegistry};
use agentrl_core::pipeline::{
    run_training, throughput_report, ConfigError, EvalRow, Event, MetricsRow, Mode, QueuedGroup, RunConfig,
    RunError, RunObserver, ThroughputReport, TrainError,
};
use serde::Serialize;

use crate::rundir::{self, RunManifest};
use crate::{CliError, ModeArg};

/// Command-line values that replace config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<ModeArg>,
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub steps: u64,
    pub final_version: u64,
    pub dropped_groups: usize,
    pub queue_peak: usize,
    pub throughput: Option<ThroughputReport>,
    pub final_eval: Vec<EvalRow>,
}

#[derive(Debug)]
pub struct TrainDone {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub summary: RunSummary,
}

/// Reads the config (defaults when `path` is `None`), applies overrides and
/// checks it against the standard task registry.
pub fn load_config(path: Option<&Path>, o: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(s) = o.steps {
        cfg.steps = s;
    }
    if let Some(m) = o.mode {
        cfg.pipeline.mode = match m {
            ModeArg::Async => Mode::Async,
            ModeArg::Sync => Mode::Sync,
        };
    }
    cfg.validate(&TaskRegistry::standard())
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// In-process controller with the configured workers.
pub fn local_gateway(cfg: &RunConfig) -> Arc<Controller> {
    let ctl = Arc::new(Controller::new(
        ControllerConfig {
            default_capacity: cfg.worker_capacity,
            ..ControllerConfig::default()
        },
        Arc::new(SystemClock::new()),
    ));
    for _ in 0..cfg.controller_workers.max(1) {
        ctl.register_worker(Arc::new(LocalWorker::new(TaskRegistry::standard())), Some(cfg.worker_capacity));
    }
    ctl
}

pub fn metrics_header(tasks: &[String]) -> Vec<String> {
    let mut h: Vec<String> = [
        "step",
        "time_s",
        "objective",
        "kl",
        "tokens",
        "groups",
        "trajectories",
        "queue_size",
        "dropped_stale",
        "dropped_filter",
        "clip_fraction",
        "grad_norm",
        "max_staleness",
        "mean_staleness",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for t in tasks {
        for col in ["groups", "mean_return", "success", "adv_mean", "adv_std"] {
            h.push(format!("{col}_{t}"));
        }
    }
    h
}

pub fn metrics_record(row: &MetricsRow, tasks: &[String]) -> Vec<String> {
    let m = &row.metrics;
    let mut r = vec![
        m.step.to_string(),
        row.time_s.to_string(),
        m.objective.to_string(),
        m.kl.to_string(),
        m.tokens.to_string(),
        m.groups.to_string(),
        row.trajectories.to_string(),
        row.queue_size.to_string(),
        m.dropped_stale.to_string(),
        m.dropped_filter.to_string(),
        m.clip_fraction.to_string(),
        m.grad_norm.to_string(),
        m.max_staleness.to_string(),
        m.mean_staleness.to_string(),
    ];
    for t in tasks {
        match m.tasks.get(t) {
            Some(s) => r.extend([
                s.groups.to_string(),
                s.mean_return.to_string(),
                s.success_rate.to_string(),
                s.adv_mean.to_string(),
                s.adv_std.to_string(),
            ]),
            None => r.extend(["0".to_string(), String::new(), String::new(), String::new(), String::new()]),
        }
    }
    r
}

struct FileSink {
    tasks: Vec<String>,
    metrics: csv::Writer<File>,
    eval: csv::Writer<File>,
    events: BufWriter<File>,
    trajectories: Option<BufWriter<File>>,
    error: Option<String>,
}

impl FileSink {
    fn open(dir: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        let create = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map_err(|e| CliError::io(format!("creating {}", p.display()), e))
        };
        let mut metrics = csv::Writer::from_writer(create(rundir::METRICS)?);
        metrics
            .write_record(metrics_header(&cfg.tasks))
            .map_err(|e| CliError::Failed(e.to_string()))?;
        let mut eval = csv::Writer::from_writer(create(rundir::EVAL)?);
        eval.write_record(["step", "task", "success_mean", "success_std", "repeats", "episodes_per_repeat"])
            .map_err(|e| CliError::Failed(e.to_string()))?;
        let trajectories = if cfg.write_trajectories {
            Some(BufWriter::new(create(rundir::TRAJECTORIES)?))
        } else {
            None
        };
        Ok(FileSink {
            tasks: cfg.tasks.clone(),
            metrics,
            eval,
            events: BufWriter::new(create(rundir::EVENTS)?),
            trajectories,
            error: None,
        })
    }

    fn note<T, E: std::fmt::Display>(&mut self, r: Result<T, E>) {
        if let Err(e) = r {
            self.error.get_or_insert_with(|| e.to_string());
        }
    }

    fn finish(mut self) -> Result<(), CliError> {
        let r = self.metrics.flush();
        self.note(r);
        let r = self.eval.flush();
        self.note(r);
        let r = self.events.flush();
        self.note(r);
        if let Some(mut t) = self.trajectories.take() {
            let r = t.flush();
            self.note(r);
        }
        match self.error {
            Some(e) => Err(CliError::Failed(format!("writing run outputs: {e}"))),
            None => Ok(()),
        }
    }
}

impl RunObserver for FileSink {
    fn on_event(&mut self, event: &Event) {
        let r = writeln!(self.events, "{}", event.to_json_line());
        self.note(r);
    }

    fn on_step(&mut self, row: &MetricsRow) {
        let rec = metrics_record(row, &self.tasks);
        let r = self.metrics.write_record(&rec);
        self.note(r);
        tracing::debug!(step = row.metrics.step, objective = row.metrics.objective, "update");
    }

    fn on_eval(&mut self, rows: &[EvalRow]) {
        for e in rows {
            let r = self.eval.write_record([
                e.step.to_string(),
                e.task.clone(),
                e.success_mean.to_string(),
                e.success_std.to_string(),
                e.repeats.to_string(),
                e.episodes_per_repeat.to_string(),
            ]);
            self.note(r);
            tracing::info!(step = e.step, task = %e.task, success = e.success_mean, "eval");
        }
        let r = self.eval.flush();
        self.note(r);
    }

    fn on_batch(&mut self, step: u64, batch: &[QueuedGroup]) {
        let Some(out) = self.trajectories.as_mut() else { return };
        let mut failed = None;
        for q in batch {
            let line = serde_json::json!({"step": step, "behavior_version": q.version, "group": q.group});
            if let Err(e) = writeln!(out, "{line}") {
                failed = Some(e);
                break;
            }
        }
        if let Some(e) = failed {
            self.note::<(), _>(Err(e));
        }
    }
}

fn run_error(e: RunError) -> CliError {
    match e {
        RunError::Config(ConfigError::UnknownTask(t)) => CliError::Config(format!("unknown task {t:?}")),
        RunError::Config(c) => CliError::Config(c.to_string()),
        RunError::Train(t @ TrainError::NonFinite { .. }) => CliError::NonFinite(t.to_string()),
        other => CliError::Failed(other.to_string()),
    }
}

/// Trains from a zero policy through `gateway` into a fresh run directory.
pub fn train_with(
    cfg: &RunConfig,
    out: &Path,
    gateway: Arc<dyn Gateway>,
) -> Result<TrainDone, CliError> {
    let (run_id, dir) = rundir::allocate(out)?;
    let manifest = RunManifest::new(&run_id, cfg);
    manifest.write_new(&dir)?;
    tracing::info!(run = %run_id, dir = %dir.display(), steps = cfg.steps, "training");
    let mut sink = FileSink::open(&dir, cfg)?;
    let result = run_training(cfg, &TaskRegistry::standard(), gateway, None, &mut sink);
    sink.finish()?;
    let outcome = result.map_err(run_error)?;
    crate::policy::save(&outcome.policy, &dir.join(rundir::POLICY))?;
    let last_step = outcome.evals.last().map(|e| e.step);
    let summary = RunSummary {
        run_id: run_id.clone(),
        steps: outcome.metrics.len() as u64,
        final_version: outcome.policy.version(),
        dropped_groups: outcome.dropped_groups,
        queue_peak: outcome.queue_peak,
        throughput: throughput_report(&outcome.events).ok(),
        final_eval: outcome.evals.iter().filter(|e| Some(e.step) == last_step).cloned().collect(),
    };
    let p = dir.join(rundir::SUMMARY);
    std::fs::write(&p, serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .map_err(|e| CliError::io(format!("writing {}", p.display()), e))?;
    Ok(TrainDone {
        run_id,
        run_dir: dir,
        summary,
    })
}

pub fn cmd_train(config: Option<&Path>, out: &Path, overrides: &Overrides) -> Result<TrainDone, CliError> {
    let cfg = load_config(config, overrides)?;
    let gateway = local_gateway(&cfg);
    train_with(&cfg, out, gateway)
}
