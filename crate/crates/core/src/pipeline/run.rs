//! Training runs: the simulated and threaded schedules, in async or sync
//! mode, plus periodic evaluation.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::bulletin::WeightsBulletin;
use super::config::{ConfigError, Mode, RunConfig, Runtime};
use super::engine::{generate_group, group_duration, group_rng, mix64, GroupJob, GroupOutcome};
use super::events::{Event, EventKind};
use super::queue::TrajectoryQueue;
use super::trainer::{QueuedGroup, StepMetrics, TrainError, Trainer};
use crate::algorithms::{mean_std, LinearSoftmaxPolicy};
use crate::domain::{TaskSpec, Vocabulary};
use crate::envs::{Gateway, TaskRegistry};
use crate::sampling::{balanced_task_iterator, single_rollout, BalancedTaskIter, Episode, StrategyKind};

/// One metrics CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub time_s: f64,
    pub queue_size: usize,
    pub trajectories: usize,
    #[serde(flatten)]
    pub metrics: StepMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub step: u64,
    pub task: String,
    pub success_mean: f64,
    pub success_std: f64,
    pub repeats: usize,
    pub episodes_per_repeat: u64,
}

/// Receives run output as it is produced. Every method defaults to a no-op.
pub trait RunObserver {
    fn on_event(&mut self, _event: &Event) {}
    fn on_step(&mut self, _row: &MetricsRow) {}
    fn on_eval(&mut self, _rows: &[EvalRow]) {}
    fn on_batch(&mut self, _step: u64, _batch: &[QueuedGroup]) {}
}

/// Observer that discards everything.
pub struct NoObserver;

impl RunObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<MetricsRow>,
    pub evals: Vec<EvalRow>,
    pub events: Vec<Event>,
    pub policy: Arc<LinearSoftmaxPolicy>,
    pub dropped_groups: usize,
    pub queue_peak: usize,
}

impl RunOutcome {
    /// Mean success per task at each evaluated step, in config task order.
    pub fn eval_table(&self, tasks: &[String]) -> Vec<(u64, Vec<f64>)> {
        let mut out: Vec<(u64, Vec<f64>)> = Vec::new();
        for r in &self.evals {
            if out.last().map(|(s, _)| *s) != Some(r.step) {
                out.push((r.step, vec![f64::NAN; tasks.len()]));
            }
            if let Some(i) = tasks.iter().position(|t| *t == r.task) {
                out.last_mut().expect("pushed").1[i] = r.success_mean;
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("pipeline stalled: {0}")]
    Stalled(String),
}

/// Evaluates `policy` on the held-out samples of every task: `repeats`
/// passes over `samples` episodes each, reporting mean and population std
/// of the per-pass success rate.
pub fn evaluate(
    policy: &Arc<LinearSoftmaxPolicy>,
    gateway: &dyn Gateway,
    specs: &[TaskSpec],
    config: &RunConfig,
    step: u64,
) -> Vec<EvalRow> {
    let ev = &config.eval;
    specs
        .iter()
        .enumerate()
        .map(|(ti, spec)| {
            let rates: Vec<f64> = (0..ev.repeats)
                .map(|r| {
                    let key = mix64(step) ^ mix64((ti as u64) << 32 | r as u64);
                    let mut rng = group_rng(config.seed ^ 0xe7a1_0000_0000, key);
                    let wins = (0..ev.samples)
                        .filter(|i| {
                            let episode = Episode::new(spec, ev.first_sample + i, config.seed, ev.temperature);
                            single_rollout(policy, gateway, &episode, &mut rng).is_success()
                        })
                        .count();
                    wins as f64 / ev.samples as f64
                })
                .collect();
            let (success_mean, success_std) = mean_std(&rates);
            EvalRow {
                step,
                task: spec.task_id.clone(),
                success_mean,
                success_std,
                repeats: ev.repeats,
                episodes_per_repeat: ev.samples,
            }
        })
        .collect()
}

struct Shared {
    config: RunConfig,
    specs: Vec<TaskSpec>,
    strategy: StrategyKind,
    gateway: Arc<dyn Gateway>,
    bulletin: WeightsBulletin,
    jobs: Mutex<(BalancedTaskIter<u64>, u64)>,
}

impl Shared {
    fn next_job(&self) -> GroupJob {
        let mut j = self.jobs.lock().unwrap_or_else(|e| e.into_inner());
        let (task_index, sample_id) = j.0.next().expect("unbounded");
        let seq = j.1;
        j.1 += 1;
        GroupJob {
            seq,
            task_index,
            sample_id,
        }
    }

    fn generate(&self, job: GroupJob, stop: Option<&AtomicBool>) -> GroupOutcome {
        generate_group(
            self.gateway.as_ref(),
            &self.specs[job.task_index],
            job,
            &self.bulletin.pool(),
            self.strategy,
            self.config.pipeline.group_size,
            self.config.pipeline.temperature,
            self.config.seed,
            stop,
        )
    }

    fn duration(&self, seq: u64) -> f64 {
        let d = &self.config.durations;
        group_duration(self.config.seed, seq, self.config.pipeline.group_size, d.episode_median_s, d.sigma)
    }
}

struct Common<'a> {
    sh: Arc<Shared>,
    trainer: Trainer,
    out: RunOutcome,
    observer: &'a mut dyn RunObserver,
}

impl<'a> Common<'a> {
    fn new(
        config: &RunConfig,
        registry: &TaskRegistry,
        gateway: Arc<dyn Gateway>,
        initial: Option<LinearSoftmaxPolicy>,
        observer: &'a mut dyn RunObserver,
    ) -> Result<Self, RunError> {
        config.validate(registry)?;
        let specs: Vec<TaskSpec> = config
            .tasks
            .iter()
            .map(|t| registry.spec(t).cloned().ok_or_else(|| ConfigError::UnknownTask(t.clone())))
            .collect::<Result<_, _>>()?;
        let policy = initial
            .unwrap_or_else(|| LinearSoftmaxPolicy::zeros(config.features.clone(), Vocabulary::standard().len()));
        if policy.vocab_size() != Vocabulary::standard().len() {
            return Err(ConfigError::Invalid("initial policy vocabulary size mismatch".into()).into());
        }
        let policy = Arc::new(policy);
        let bulletin = WeightsBulletin::new(policy.clone(), config.pipeline.k_stale, 0.0)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let trainer = Trainer::new(
            (*policy).clone(),
            config.effective_hp(),
            specs.clone(),
            config.pipeline.staleness_bound(),
        );
        let datasets = vec![(0..config.train_samples).collect::<Vec<u64>>(); specs.len()];
        let jobs = balanced_task_iterator(datasets).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Common {
            sh: Arc::new(Shared {
                strategy: config.effective_strategy(),
                config: config.clone(),
                specs,
                gateway,
                bulletin,
                jobs: Mutex::new((jobs, 0)),
            }),
            trainer,
            out: RunOutcome {
                metrics: Vec::new(),
                evals: Vec::new(),
                events: Vec::new(),
                policy,
                dropped_groups: 0,
                queue_peak: 0,
            },
            observer,
        })
    }

    fn emit(&mut self, e: Event) {
        self.observer.on_event(&e);
        self.out.events.push(e);
    }

    fn maybe_eval(&mut self, step: u64) {
        let cfg = &self.sh.config;
        let every = cfg.eval.every;
        if every == 0 || (!step.is_multiple_of(every) && step != cfg.steps) {
            return;
        }
        let rows = evaluate(self.trainer.policy(), self.sh.gateway.as_ref(), &self.sh.specs, cfg, step);
        self.observer.on_eval(&rows);
        self.out.evals.extend(rows);
    }

    fn train(&mut self, batch: Vec<QueuedGroup>) -> Result<(StepMetrics, usize, f64), RunError> {
        let trajectories = batch.iter().map(|q| q.group.trajectories.len()).sum();
        let v = self.trainer.version();
        let lag = batch.iter().map(|q| v.saturating_sub(q.version) as f64).sum::<f64>() / batch.len() as f64;
        self.observer.on_batch(v + 1, &batch);
        let m = self.trainer.training_step(batch)?;
        Ok((m, trajectories, lag))
    }

    fn finish_step(&mut self, m: StepMetrics, trajectories: usize, time_s: f64, queue_size: usize) -> Result<(), RunError> {
        let version = self
            .sh
            .bulletin
            .publish(self.trainer.policy().clone(), time_s)
            .map_err(|e| RunError::Stalled(e.to_string()))?;
        self.emit(Event::new(time_s, EventKind::TrainFinished, version, queue_size));
        let row = MetricsRow {
            time_s,
            queue_size,
            trajectories,
            metrics: m,
        };
        self.observer.on_step(&row);
        self.out.metrics.push(row);
        self.maybe_eval(version);
        Ok(())
    }

    fn done(mut self, end: f64) -> RunOutcome {
        let v = self.trainer.version();
        self.emit(Event::new(end, EventKind::RunFinished, v, 0));
        self.out.policy = self.trainer.policy().clone();
        self.out
    }
}

/// Runs training as configured (runtime and mode both come from `config`).
/// `initial` replaces the zero policy when given.
pub fn run_training(
    config: &RunConfig,
    registry: &TaskRegistry,
    gateway: Arc<dyn Gateway>,
    initial: Option<LinearSoftmaxPolicy>,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome, RunError> {
    let mut c = Common::new(config, registry, gateway, initial, observer)?;
    c.emit(Event::new(0.0, EventKind::RunStarted, c.trainer.version(), 0));
    c.maybe_eval(0);
    match (config.runtime, config.pipeline.mode) {
        (Runtime::Simulated, Mode::Async) => simulated_async(c),
        (Runtime::Simulated, Mode::Sync) => simulated_sync(c),
        (Runtime::Threaded, Mode::Async) => threaded_async(c),
        (Runtime::Threaded, Mode::Sync) => threaded_sync(c),
    }
}

/// The lockstep baseline: same math path, `mode` forced to sync.
pub fn run_sync_baseline(
    config: &RunConfig,
    registry: &TaskRegistry,
    gateway: Arc<dyn Gateway>,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome, RunError> {
    let mut cfg = config.clone();
    cfg.pipeline.mode = Mode::Sync;
    run_training(&cfg, registry, gateway, None, observer)
}

enum EngineState {
    Running { until: f64, outcome: GroupOutcome },
    Blocked { group: QueuedGroup },
}

fn simulated_async(mut c: Common<'_>) -> Result<RunOutcome, RunError> {
    let p = c.sh.config.pipeline.clone();
    let train_s = c.sh.config.durations.train_step_s;
    let mut queue: VecDeque<QueuedGroup> = VecDeque::with_capacity(p.q_max);
    let mut blocked: VecDeque<usize> = VecDeque::new();
    let mut engines: Vec<EngineState> = Vec::with_capacity(p.n_engines);
    let mut training: Option<(f64, StepMetrics, usize)> = None;
    let mut t = 0.0;

    let start = |c: &mut Common<'_>, e: usize, t: f64, qlen: usize| -> EngineState {
        let job = c.sh.next_job();
        let v = c.sh.bulletin.version();
        c.emit(Event::new(t, EventKind::GroupStarted, v, qlen).engine(e));
        let outcome = c.sh.generate(job, None);
        EngineState::Running {
            until: t + c.sh.duration(job.seq),
            outcome,
        }
    };
    for e in 0..p.n_engines {
        let s = start(&mut c, e, 0.0, 0);
        engines.push(s);
    }
    loop {
        if training.is_none() && queue.len() >= p.b_min {
            let n = queue.len().min(p.b_max);
            let batch: Vec<QueuedGroup> = queue.drain(..n).collect();
            let (m, trajectories, lag) = c.train(batch)?;
            let v = c.sh.bulletin.version();
            c.emit(Event::new(t, EventKind::TrainStarted, v, queue.len()).batch(n, trajectories, lag));
            training = Some((t + train_s, m, trajectories));
            // freed slots go to blocked engines in the order they blocked
            while queue.len() < p.q_max {
                let Some(e) = blocked.pop_front() else { break };
                let EngineState::Blocked { group } = std::mem::replace(
                    &mut engines[e],
                    EngineState::Blocked {
                        group: placeholder(),
                    },
                ) else {
                    unreachable!("blocked list holds blocked engines")
                };
                let v = group.version;
                queue.push_back(group);
                c.out.queue_peak = c.out.queue_peak.max(queue.len());
                c.emit(Event::new(t, EventKind::GroupEnqueued, v, queue.len()).engine(e));
                engines[e] = start(&mut c, e, t, queue.len());
            }
            continue;
        }
        let next_engine = engines
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                EngineState::Running { until, .. } => Some((*until, i)),
                EngineState::Blocked { .. } => None,
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let trainer_due = training.as_ref().map(|(until, _, _)| *until);
        match (trainer_due, next_engine) {
            (Some(tu), e) if e.is_none_or(|(eu, _)| tu <= eu) => {
                t = tu;
                let (_, m, trajectories) = training.take().expect("checked");
                let step = m.step;
                c.finish_step(m, trajectories, t, queue.len())?;
                if step >= c.sh.config.steps {
                    return Ok(c.done(t));
                }
            }
            (_, Some((eu, e))) => {
                t = eu;
                let EngineState::Running { outcome, .. } = std::mem::replace(
                    &mut engines[e],
                    EngineState::Blocked {
                        group: placeholder(),
                    },
                ) else {
                    unreachable!("picked a running engine")
                };
                match outcome {
                    GroupOutcome::Ready(q) => {
                        if queue.len() < p.q_max {
                            let v = q.version;
                            queue.push_back(q);
                            c.out.queue_peak = c.out.queue_peak.max(queue.len());
                            c.emit(Event::new(t, EventKind::GroupEnqueued, v, queue.len()).engine(e));
                            engines[e] = start(&mut c, e, t, queue.len());
                        } else {
                            let v = c.sh.bulletin.version();
                            c.emit(Event::new(t, EventKind::EngineBlocked, v, queue.len()).engine(e));
                            engines[e] = EngineState::Blocked { group: q };
                            blocked.push_back(e);
                        }
                    }
                    GroupOutcome::Dropped { .. } | GroupOutcome::Interrupted => {
                        c.out.dropped_groups += 1;
                        let v = c.sh.bulletin.version();
                        c.emit(Event::new(t, EventKind::GroupDropped, v, queue.len()).engine(e));
                        engines[e] = start(&mut c, e, t, queue.len());
                    }
                }
            }
            _ => return Err(RunError::Stalled("no engine running and trainer idle".into())),
        }
    }
}

fn placeholder() -> QueuedGroup {
    QueuedGroup {
        group: crate::domain::TrajectoryGroup::new("", 0, 0),
        version: 0,
    }
}

/// Generates exactly `b_max` usable groups with the current weights. Job `k`
/// of the step runs on engine `k mod n_engines`; returns the groups in job
/// order with each group's engine-local start and end offsets.
fn sync_generate(
    c: &mut Common<'_>,
    stop: Option<&AtomicBool>,
    threaded: bool,
) -> Vec<(usize, f64, f64, GroupOutcome, u64)> {
    let p = c.sh.config.pipeline.clone();
    let mut clocks = vec![0.0; p.n_engines];
    let mut out = Vec::new();
    let mut ready = 0;
    while ready < p.b_max {
        let need = p.b_max - ready;
        let jobs: Vec<GroupJob> = (0..need).map(|_| c.sh.next_job()).collect();
        let outcomes: Vec<GroupOutcome> = if threaded {
            let cref: &Shared = &c.sh;
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..p.n_engines.min(jobs.len()))
                    .map(|e| {
                        let mine: Vec<GroupJob> = jobs.iter().copied().skip(e).step_by(p.n_engines).collect();
                        s.spawn(move || mine.into_iter().map(|j| (j.seq, cref.generate(j, stop))).collect::<Vec<_>>())
                    })
                    .collect();
                let mut all: Vec<(u64, GroupOutcome)> =
                    handles.into_iter().flat_map(|h| h.join().expect("engine thread")).collect();
                all.sort_by_key(|(seq, _)| *seq);
                all.into_iter().map(|(_, o)| o).collect()
            })
        } else {
            jobs.iter().map(|j| c.sh.generate(*j, stop)).collect()
        };
        for (k, (job, outcome)) in jobs.iter().zip(outcomes).enumerate() {
            let e = (out.len() + k) % p.n_engines;
            let d = c.sh.duration(job.seq);
            let t0 = clocks[e];
            clocks[e] += d;
            if matches!(outcome, GroupOutcome::Ready(_)) {
                ready += 1;
            }
            out.push((e, t0, t0 + d, outcome, job.seq));
        }
        if stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
            break;
        }
    }
    out
}

fn simulated_sync(mut c: Common<'_>) -> Result<RunOutcome, RunError> {
    let train_s = c.sh.config.durations.train_step_s;
    let mut t = 0.0;
    for _ in 0..c.sh.config.steps {
        let made = sync_generate(&mut c, None, false);
        let v = c.sh.bulletin.version();
        let gen = made.iter().map(|m| m.2).fold(0.0, f64::max);
        let mut timeline: Vec<(f64, u8, usize, Option<GroupOutcome>)> = Vec::new();
        for (e, t0, t1, outcome, _) in made {
            timeline.push((t + t0, 0, e, None));
            timeline.push((t + t1, 1, e, Some(outcome)));
        }
        timeline.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut batch = Vec::new();
        for (ts, _, e, outcome) in timeline {
            match outcome {
                None => c.emit(Event::new(ts, EventKind::GroupStarted, v, batch.len()).engine(e)),
                Some(GroupOutcome::Ready(q)) => {
                    batch.push(q);
                    c.out.queue_peak = c.out.queue_peak.max(batch.len());
                    c.emit(Event::new(ts, EventKind::GroupEnqueued, v, batch.len()).engine(e));
                }
                Some(_) => {
                    c.out.dropped_groups += 1;
                    c.emit(Event::new(ts, EventKind::GroupDropped, v, batch.len()).engine(e));
                }
            }
        }
        t += gen;
        let n = batch.len();
        let (m, trajectories, lag) = c.train(batch)?;
        c.emit(Event::new(t, EventKind::TrainStarted, v, 0).batch(n, trajectories, lag));
        t += train_s;
        c.finish_step(m, trajectories, t, 0)?;
    }
    Ok(c.done(t))
}

fn threaded_sync(mut c: Common<'_>) -> Result<RunOutcome, RunError> {
    let t0 = Instant::now();
    for _ in 0..c.sh.config.steps {
        let v = c.sh.bulletin.version();
        let made = sync_generate(&mut c, None, true);
        let now = t0.elapsed().as_secs_f64();
        let mut batch = Vec::new();
        for (e, _, _, outcome, _) in made {
            match outcome {
                GroupOutcome::Ready(q) => {
                    batch.push(q);
                    c.emit(Event::new(now, EventKind::GroupEnqueued, v, batch.len()).engine(e));
                }
                _ => {
                    c.out.dropped_groups += 1;
                    c.emit(Event::new(now, EventKind::GroupDropped, v, batch.len()).engine(e));
                }
            }
        }
        c.out.queue_peak = c.out.queue_peak.max(batch.len());
        let n = batch.len();
        let (m, trajectories, lag) = c.train(batch)?;
        c.emit(Event::new(now, EventKind::TrainStarted, v, 0).batch(n, trajectories, lag));
        c.finish_step(m, trajectories, t0.elapsed().as_secs_f64(), 0)?;
    }
    let end = t0.elapsed().as_secs_f64();
    Ok(c.done(end))
}

fn threaded_async(mut c: Common<'_>) -> Result<RunOutcome, RunError> {
    let p = c.sh.config.pipeline.clone();
    let steps = c.sh.config.steps;
    let queue = TrajectoryQueue::<QueuedGroup>::new(p.q_max);
    let stop = AtomicBool::new(false);
    let t0 = Instant::now();
    let pending: Mutex<Vec<Event>> = Mutex::new(Vec::new());
    let sh = c.sh.clone();
    let result = std::thread::scope(|s| {
        for e in 0..p.n_engines {
            let (queue, stop, pending, sh) = (&queue, &stop, &pending, &sh);
            s.spawn(move || {
                let log = |kind: EventKind, v: u64| {
                    let ev = Event::new(t0.elapsed().as_secs_f64(), kind, v, queue.len()).engine(e);
                    pending.lock().unwrap_or_else(|x| x.into_inner()).push(ev);
                };
                while !stop.load(Ordering::SeqCst) {
                    let job = sh.next_job();
                    let pool = sh.bulletin.pool();
                    let v = pool.fresh().version();
                    log(EventKind::GroupStarted, v);
                    let outcome = generate_group(
                        sh.gateway.as_ref(),
                        &sh.specs[job.task_index],
                        job,
                        &pool,
                        sh.strategy,
                        sh.config.pipeline.group_size,
                        sh.config.pipeline.temperature,
                        sh.config.seed,
                        Some(stop),
                    );
                    match outcome {
                        GroupOutcome::Ready(q) => {
                            if queue.len() >= queue.capacity() {
                                log(EventKind::EngineBlocked, v);
                            }
                            if queue.push(q).is_err() {
                                break;
                            }
                            log(EventKind::GroupEnqueued, v);
                        }
                        GroupOutcome::Dropped { .. } => log(EventKind::GroupDropped, v),
                        GroupOutcome::Interrupted => break,
                    }
                }
            });
        }
        let mut trainer_loop = || -> Result<(), RunError> {
            for _ in 0..steps {
                let pulled = loop {
                    let got = queue.pull_batch_timeout(p.b_min, p.b_max, Duration::from_millis(200));
                    if !got.items.is_empty() || got.shutdown {
                        break got;
                    }
                };
                if pulled.shutdown {
                    return Err(RunError::Stalled("queue closed".into()));
                }
                flush(&mut c, &pending);
                let now = t0.elapsed().as_secs_f64();
                let n = pulled.items.len();
                let v = c.trainer.version();
                let (m, trajectories, lag) = c.train(pulled.items)?;
                c.emit(Event::new(now, EventKind::TrainStarted, v, queue.len()).batch(n, trajectories, lag));
                c.out.queue_peak = c.out.queue_peak.max(queue.peak());
                let ql = queue.len();
                c.finish_step(m, trajectories, t0.elapsed().as_secs_f64(), ql)?;
            }
            Ok(())
        };
        let r = trainer_loop();
        stop.store(true, Ordering::SeqCst);
        queue.close();
        r
    });
    result?;
    flush(&mut c, &pending);
    let end = t0.elapsed().as_secs_f64();
    Ok(c.done(end))
}

fn flush(c: &mut Common<'_>, pending: &Mutex<Vec<Event>>) {
    let mut drained = std::mem::take(&mut *pending.lock().unwrap_or_else(|x| x.into_inner()));
    drained.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    for ev in drained {
        if ev.event == EventKind::GroupDropped {
            c.out.dropped_groups += 1;
        }
        c.emit(ev);
    }
}
