//! Session routing, lifecycle bookkeeping, timeouts, and worker health.
//!
//! Lock order: worker registry, then the session table, then a single
//! session. No lock is held while a worker is called.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::clock::Clock;
use super::error::ControllerError;
use super::task::{SessionState, StepResult};
use super::worker::Worker;
use crate::domain::{ToolCall, ToolSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub interaction_timeout: Duration,
    pub heartbeat_interval: Duration,
    pub default_capacity: usize,
    /// Terminal session records older than this are purged.
    pub retention: Duration,
    pub suspect_after_missed: u32,
    pub deregister_after_missed: u32,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            interaction_timeout: Duration::from_secs(30),
            heartbeat_interval: Duration::from_secs(5),
            default_capacity: 32,
            retention: Duration::from_secs(600),
            suspect_after_missed: 3,
            deregister_after_missed: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Healthy,
    Suspect,
    Deregistered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub task_id: String,
    pub sample_id: u64,
    pub worker_id: u64,
    pub state: SessionState,
    /// Seconds since the controller clock's origin.
    pub last_activity: f64,
    pub turn_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerInfo {
    pub worker_id: u64,
    pub tasks: Vec<String>,
    pub capacity: usize,
    pub live_sessions: usize,
    pub last_heartbeat: f64,
    pub health: Health,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Started {
    pub session_id: String,
    pub observation: String,
    pub tools: Vec<ToolSchema>,
}

/// The training side's view of the environment service: one call sequence
/// for every task.
pub trait Gateway: Send + Sync {
    fn start_sample(&self, task_id: &str, sample_id: u64, seed: u64) -> Result<Started, ControllerError>;
    fn interact(&self, session_id: &str, call: &ToolCall) -> Result<StepResult, ControllerError>;
    fn cancel(&self, session_id: &str) -> Result<(), ControllerError>;
}

struct WorkerSlot {
    worker: Arc<dyn Worker>,
    tasks: Vec<String>,
    capacity: usize,
    live: Arc<AtomicUsize>,
    alive: Arc<AtomicBool>,
    last_heartbeat: Duration,
    health: Health,
}

#[derive(Default)]
struct Registry {
    workers: BTreeMap<u64, WorkerSlot>,
    next_id: u64,
}

struct SessionEntry {
    info: SessionInfo,
    last_activity: Duration,
    worker: Arc<dyn Worker>,
    live: Arc<AtomicUsize>,
    busy: bool,
    released: bool,
}

impl SessionEntry {
    /// Moves to a terminal state and frees the worker slot, exactly once.
    /// Returns the worker to release the environment on, to be called after
    /// the session lock is dropped.
    fn finish(&mut self, state: SessionState, detail: Option<String>) -> Option<Arc<dyn Worker>> {
        if self.info.state.is_terminal() {
            return None;
        }
        self.info.state = state;
        if detail.is_some() {
            self.info.detail = detail;
        }
        if self.released {
            return None;
        }
        self.released = true;
        self.live.fetch_sub(1, Ordering::SeqCst);
        Some(self.worker.clone())
    }
}

pub struct Controller {
    config: ControllerConfig,
    clock: Arc<dyn Clock>,
    registry: RwLock<Registry>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    next_session: AtomicU64,
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

impl Controller {
    pub fn new(config: ControllerConfig, clock: Arc<dyn Clock>) -> Self {
        Controller {
            config,
            clock,
            registry: RwLock::new(Registry::default()),
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn now(&self) -> Duration {
        self.clock.now()
    }

    /// Registers a worker and returns its fresh id. `capacity` of `None`
    /// uses the configured default.
    pub fn register_worker(&self, worker: Arc<dyn Worker>, capacity: Option<usize>) -> u64 {
        let tasks = worker.tasks();
        let now = self.clock.now();
        let mut reg = self.registry.write().unwrap();
        let id = reg.next_id;
        reg.next_id += 1;
        reg.workers.insert(
            id,
            WorkerSlot {
                worker,
                tasks,
                capacity: capacity.unwrap_or(self.config.default_capacity),
                live: Arc::new(AtomicUsize::new(0)),
                alive: Arc::new(AtomicBool::new(true)),
                last_heartbeat: now,
                health: Health::Healthy,
            },
        );
        tracing::debug!(worker_id = id, "worker registered");
        id
    }

    pub fn heartbeat(&self, worker_id: u64) -> Result<(), ControllerError> {
        let now = self.clock.now();
        let mut reg = self.registry.write().unwrap();
        let slot = reg
            .workers
            .get_mut(&worker_id)
            .ok_or(ControllerError::UnknownWorker(worker_id))?;
        if slot.health == Health::Deregistered {
            return Err(ControllerError::Deregistered(worker_id));
        }
        slot.last_heartbeat = now;
        slot.health = Health::Healthy;
        Ok(())
    }

    /// Pings every registered worker and records a heartbeat for those that
    /// answer. Used for in-process and remote workers alike.
    pub fn poll_heartbeats(&self) {
        let workers: Vec<(u64, Arc<dyn Worker>)> = {
            let reg = self.registry.read().unwrap();
            reg.workers
                .iter()
                .filter(|(_, s)| s.health != Health::Deregistered)
                .map(|(id, s)| (*id, s.worker.clone()))
                .collect()
        };
        for (id, w) in workers {
            if w.ping() {
                let _ = self.heartbeat(id);
            }
        }
    }

    /// Applies the heartbeat policy at `now`: missing `suspect_after_missed`
    /// intervals makes a worker suspect, missing `deregister_after_missed`
    /// deregisters it and fails its running sessions. Returns the ids
    /// deregistered by this call.
    pub fn check_heartbeats(&self, now: Duration) -> Vec<u64> {
        let h = self.config.heartbeat_interval.as_secs_f64().max(1e-9);
        let mut dropped = Vec::new();
        let mut reg = self.registry.write().unwrap();
        for (id, slot) in reg.workers.iter_mut() {
            if slot.health == Health::Deregistered {
                continue;
            }
            let missed = (now.saturating_sub(slot.last_heartbeat).as_secs_f64() / h).floor() as u32;
            if missed >= self.config.deregister_after_missed {
                slot.health = Health::Deregistered;
                slot.alive.store(false, Ordering::SeqCst);
                dropped.push(*id);
            } else if missed >= self.config.suspect_after_missed {
                slot.health = Health::Suspect;
            }
        }
        if dropped.is_empty() {
            return dropped;
        }
        // registry -> session table -> session, per the lock order
        let mut releases = Vec::new();
        {
            let table = self.sessions.lock().unwrap();
            for entry in table.values() {
                let mut e = entry.lock().unwrap();
                if dropped.contains(&e.info.worker_id) {
                    if let Some(w) = e.finish(SessionState::Error, Some("worker deregistered".into())) {
                        releases.push((w, e.info.session_id.clone()));
                    }
                }
            }
        }
        drop(reg);
        for (w, sid) in releases {
            w.release(&sid);
        }
        tracing::warn!(?dropped, "workers deregistered");
        dropped
    }

    fn pick_worker(&self, task_id: &str) -> Result<(u64, Arc<dyn Worker>, Arc<AtomicUsize>, Arc<AtomicBool>), ControllerError> {
        // exclusive so two pickers cannot both reserve the last slot
        #[allow(clippy::readonly_write_lock)]
        let reg = self.registry.write().unwrap();
        let mut supported = false;
        let mut best: Option<(&u64, &WorkerSlot, usize)> = None;
        for (id, slot) in &reg.workers {
            if slot.health == Health::Deregistered || !slot.tasks.iter().any(|t| t == task_id) {
                continue;
            }
            supported = true;
            if slot.health != Health::Healthy {
                continue;
            }
            let live = slot.live.load(Ordering::SeqCst);
            if live >= slot.capacity {
                continue;
            }
            if best.is_none_or(|(_, _, l)| live < l) {
                best = Some((id, slot, live));
            }
        }
        match best {
            Some((id, slot, _)) => {
                // reserve while still holding the registry lock
                slot.live.fetch_add(1, Ordering::SeqCst);
                Ok((*id, slot.worker.clone(), slot.live.clone(), slot.alive.clone()))
            }
            None if supported => Err(ControllerError::NoCapacity),
            None => Err(ControllerError::UnknownTask(task_id.to_string())),
        }
    }

    pub fn start_sample(&self, task_id: &str, sample_id: u64, seed: u64) -> Result<Started, ControllerError> {
        let (worker_id, worker, live, alive) = self.pick_worker(task_id)?;
        let session_id = format!("s-{}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let (observation, tools) = match worker.start(&session_id, task_id, sample_id, seed) {
            Ok(x) => x,
            Err(e) => {
                live.fetch_sub(1, Ordering::SeqCst);
                worker.release(&session_id);
                return Err(ControllerError::WorkerFailure(e));
            }
        };
        let now = self.clock.now();
        let entry = Arc::new(Mutex::new(SessionEntry {
            info: SessionInfo {
                session_id: session_id.clone(),
                task_id: task_id.to_string(),
                sample_id,
                worker_id,
                state: SessionState::Running,
                last_activity: secs(now),
                turn_count: 0,
                detail: None,
            },
            last_activity: now,
            worker,
            live,
            busy: false,
            released: false,
        }));
        self.sessions.lock().unwrap().insert(session_id.clone(), entry.clone());
        if !alive.load(Ordering::SeqCst) {
            // the worker was deregistered while the session was starting
            let w = entry.lock().unwrap().finish(SessionState::Error, Some("worker deregistered".into()));
            if let Some(w) = w {
                w.release(&session_id);
            }
            return Err(ControllerError::WorkerFailure("worker deregistered".into()));
        }
        Ok(Started {
            session_id,
            observation,
            tools,
        })
    }

    fn entry(&self, session_id: &str) -> Result<Arc<Mutex<SessionEntry>>, ControllerError> {
        self.sessions
            .lock()
            .unwrap()
            .get(session_id)
            .cloned()
            .ok_or_else(|| ControllerError::UnknownSession(session_id.to_string()))
    }

    pub fn interact(&self, session_id: &str, call: &ToolCall) -> Result<StepResult, ControllerError> {
        let entry = self.entry(session_id)?;
        let worker = {
            let mut e = entry.lock().unwrap();
            if e.info.state.is_terminal() {
                return Err(ControllerError::SessionTerminal(session_id.to_string()));
            }
            if e.busy {
                return Err(ControllerError::SessionBusy(session_id.to_string()));
            }
            e.busy = true;
            e.last_activity = self.clock.now();
            e.info.last_activity = secs(e.last_activity);
            e.worker.clone()
        };
        let result = worker.interact(session_id, call);
        let now = self.clock.now();
        let mut e = entry.lock().unwrap();
        e.busy = false;
        if e.info.state.is_terminal() {
            // reaped, cancelled or failed while the worker was busy
            return Err(ControllerError::SessionTerminal(session_id.to_string()));
        }
        e.last_activity = now;
        e.info.last_activity = secs(now);
        let release = match &result {
            Ok(r) => {
                e.info.turn_count += 1;
                if r.done || r.status.is_terminal() {
                    e.finish(r.status, None)
                } else {
                    None
                }
            }
            Err(msg) => e.finish(SessionState::Error, Some(msg.clone())),
        };
        drop(e);
        if let Some(w) = release {
            w.release(session_id);
        }
        result.map_err(ControllerError::WorkerFailure)
    }

    pub fn cancel_session(&self, session_id: &str) -> Result<(), ControllerError> {
        let entry = self.entry(session_id)?;
        let release = entry
            .lock()
            .unwrap()
            .finish(SessionState::Error, Some("cancelled".into()));
        if let Some(w) = release {
            w.release(session_id);
        }
        Ok(())
    }

    /// Times out every running session idle for longer than the interaction
    /// timeout. Idempotent.
    pub fn reap_timeouts(&self, now: Duration) -> Vec<String> {
        let entries: Vec<_> = self.sessions.lock().unwrap().values().cloned().collect();
        let mut reaped = Vec::new();
        for entry in entries {
            let mut e = entry.lock().unwrap();
            if e.info.state == SessionState::Running
                && now.saturating_sub(e.last_activity) > self.config.interaction_timeout
            {
                let w = e.finish(SessionState::Timeout, Some("interaction timeout".into()));
                let sid = e.info.session_id.clone();
                drop(e);
                if let Some(w) = w {
                    w.release(&sid);
                }
                reaped.push(sid);
            }
        }
        reaped.sort_by_key(|s| session_number(s));
        reaped
    }

    /// Drops terminal session records older than the retention window.
    pub fn purge_terminal(&self, now: Duration) -> usize {
        let mut table = self.sessions.lock().unwrap();
        let before = table.len();
        table.retain(|_, entry| {
            let e = entry.lock().unwrap();
            !(e.info.state.is_terminal()
                && !e.busy
                && now.saturating_sub(e.last_activity) > self.config.retention)
        });
        before - table.len()
    }

    /// One pass of periodic maintenance.
    pub fn maintain(&self) {
        self.poll_heartbeats();
        let now = self.clock.now();
        self.check_heartbeats(now);
        self.reap_timeouts(now);
        self.purge_terminal(now);
    }

    /// Runs `maintain` every `period` on a background thread until `stop`
    /// is set.
    pub fn spawn_maintenance(self: &Arc<Self>, period: Duration, stop: Arc<AtomicBool>) -> thread::JoinHandle<()> {
        let me = Arc::clone(self);
        thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                me.maintain();
                thread::sleep(period);
            }
        })
    }

    pub fn list_sessions(&self, filter: Option<SessionState>) -> Vec<SessionInfo> {
        let table = self.sessions.lock().unwrap();
        let mut out: Vec<SessionInfo> = table
            .values()
            .map(|e| e.lock().unwrap().info.clone())
            .filter(|i| filter.is_none_or(|f| i.state == f))
            .collect();
        drop(table);
        out.sort_by_key(|i| session_number(&i.session_id));
        out
    }

    pub fn list_workers(&self) -> Vec<WorkerInfo> {
        let reg = self.registry.read().unwrap();
        reg.workers
            .iter()
            .map(|(id, s)| WorkerInfo {
                worker_id: *id,
                tasks: s.tasks.clone(),
                capacity: s.capacity,
                live_sessions: s.live.load(Ordering::SeqCst),
                last_heartbeat: secs(s.last_heartbeat),
                health: s.health,
            })
            .collect()
    }

    /// Cancels every running session (graceful drain).
    pub fn drain(&self) -> usize {
        let running = self.list_sessions(Some(SessionState::Running));
        for s in &running {
            let _ = self.cancel_session(&s.session_id);
        }
        running.len()
    }

    /// Sum of live-session counters over non-deregistered workers.
    pub fn live_total(&self) -> usize {
        self.list_workers()
            .iter()
            .filter(|w| w.health != Health::Deregistered)
            .map(|w| w.live_sessions)
            .sum()
    }
}

fn session_number(id: &str) -> u64 {
    id.strip_prefix("s-").and_then(|n| n.parse().ok()).unwrap_or(u64::MAX)
}

impl Gateway for Controller {
    fn start_sample(&self, task_id: &str, sample_id: u64, seed: u64) -> Result<Started, ControllerError> {
        Controller::start_sample(self, task_id, sample_id, seed)
    }

    fn interact(&self, session_id: &str, call: &ToolCall) -> Result<StepResult, ControllerError> {
        Controller::interact(self, session_id, call)
    }

    fn cancel(&self, session_id: &str) -> Result<(), ControllerError> {
        self.cancel_session(session_id)
    }
}

impl<G: Gateway + ?Sized> Gateway for Arc<G> {
    fn start_sample(&self, task_id: &str, sample_id: u64, seed: u64) -> Result<Started, ControllerError> {
        (**self).start_sample(task_id, sample_id, seed)
    }

    fn interact(&self, session_id: &str, call: &ToolCall) -> Result<StepResult, ControllerError> {
        (**self).interact(session_id, call)
    }

    fn cancel(&self, session_id: &str) -> Result<(), ControllerError> {
        (**self).cancel(session_id)
    }
}

/// Controller with `workers` in-process workers over the standard tasks.
pub fn local_controller(
    config: ControllerConfig,
    clock: Arc<dyn Clock>,
    workers: usize,
) -> Arc<Controller> {
    let c = Arc::new(Controller::new(config, clock));
    for _ in 0..workers {
        c.register_worker(
            Arc::new(super::worker::LocalWorker::new(super::task::TaskRegistry::standard())),
            None,
        );
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::clock::ManualClock;
    use crate::envs::task::TaskRegistry;
    use crate::envs::worker::LocalWorker;

    fn setup(workers: usize, capacity: usize) -> (Arc<Controller>, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new());
        let config = ControllerConfig {
            default_capacity: capacity,
            ..ControllerConfig::default()
        };
        (local_controller(config, clock.clone(), workers), clock)
    }

    #[test]
    fn lifecycle_and_listing() {
        let (c, _) = setup(1, 8);
        assert!(c.list_sessions(None).is_empty());
        let ids: Vec<String> = (0..3)
            .map(|i| c.start_sample("bisect", i, 1).unwrap().session_id)
            .collect();
        let hidden = crate::envs::bisect::BisectGuess::hidden_for(0, 1);
        let r = c
            .interact(&ids[0], &ToolCall::new("answer").arg("x", hidden))
            .unwrap();
        assert!(r.done);
        assert_eq!(r.status, SessionState::Completed);
        let all = c.list_sessions(None);
        assert_eq!(all.len(), 3);
        assert_eq!(all.iter().filter(|s| s.state == SessionState::Completed).count(), 1);
        assert_eq!(c.list_sessions(Some(SessionState::Running)).len(), 2);
        assert_eq!(
            c.interact(&ids[0], &ToolCall::new("answer").arg("x", 0)),
            Err(ControllerError::SessionTerminal(ids[0].clone()))
        );
        assert_eq!(c.live_total(), 2);
    }

    #[test]
    fn unknown_task_and_capacity() {
        let (c, _) = setup(2, 1);
        assert_eq!(
            c.start_sample("foo", 0, 0).unwrap_err().to_string(),
            "unknown task \"foo\""
        );
        c.start_sample("bisect", 0, 0).unwrap();
        c.start_sample("bisect", 1, 0).unwrap();
        let err = c.start_sample("bisect", 2, 0).unwrap_err();
        assert_eq!(err, ControllerError::NoCapacity);
        assert!(err.retryable());
    }

    #[test]
    fn least_loaded_dispatch_with_lowest_id_ties() {
        let (c, _) = setup(3, 8);
        let workers: Vec<u64> = (0..6)
            .map(|i| {
                let s = c.start_sample("kvstore", i, 0).unwrap();
                c.list_sessions(None)
                    .into_iter()
                    .find(|x| x.session_id == s.session_id)
                    .unwrap()
                    .worker_id
            })
            .collect();
        assert_eq!(workers, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn cancel_semantics() {
        let (c, _) = setup(1, 4);
        let s = c.start_sample("gridtext", 0, 0).unwrap().session_id;
        c.cancel_session(&s).unwrap();
        assert_eq!(c.live_total(), 0);
        c.cancel_session(&s).unwrap();
        assert_eq!(c.list_sessions(None)[0].state, SessionState::Error);
        assert!(matches!(c.cancel_session("s-999"), Err(ControllerError::UnknownSession(_))));
    }

    #[test]
    fn reaping_is_idempotent() {
        let (c, clock) = setup(1, 4);
        let idle = c.start_sample("bisect", 0, 0).unwrap().session_id;
        clock.advance(Duration::from_secs(45));
        let active = c.start_sample("bisect", 1, 0).unwrap().session_id;
        clock.advance(Duration::from_secs(20));
        let reaped = c.reap_timeouts(clock.now());
        assert_eq!(reaped, vec![idle.clone()]);
        assert!(c.reap_timeouts(clock.now()).is_empty());
        assert_eq!(c.live_total(), 1);
        let states: HashMap<_, _> = c
            .list_sessions(None)
            .into_iter()
            .map(|s| (s.session_id, s.state))
            .collect();
        assert_eq!(states[&idle], SessionState::Timeout);
        assert_eq!(states[&active], SessionState::Running);
    }

    #[test]
    fn heartbeat_policy() {
        let (c, clock) = setup(2, 4);
        let s = c.start_sample("bisect", 0, 0).unwrap().session_id;
        clock.set(Duration::from_secs(16));
        c.heartbeat(1).unwrap();
        c.check_heartbeats(clock.now());
        let w = c.list_workers();
        assert_eq!(w[0].health, Health::Suspect);
        assert_eq!(w[1].health, Health::Healthy);
        // suspect workers get no new sessions
        c.start_sample("bisect", 1, 0).unwrap();
        assert_eq!(c.list_workers()[1].live_sessions, 1);
        clock.set(Duration::from_secs(31));
        c.heartbeat(1).unwrap();
        assert_eq!(c.check_heartbeats(clock.now()), vec![0]);
        assert_eq!(c.list_workers()[0].health, Health::Deregistered);
        let info = c.list_sessions(None).into_iter().find(|i| i.session_id == s).unwrap();
        assert_eq!(info.state, SessionState::Error);
        assert_eq!(c.heartbeat(0), Err(ControllerError::Deregistered(0)));
        let fresh = c.register_worker(Arc::new(LocalWorker::new(TaskRegistry::standard())), None);
        assert_eq!(fresh, 2);
        assert_eq!(c.list_workers()[2].health, Health::Healthy);
    }

    #[test]
    fn retention_purges_old_terminal_records() {
        let (c, clock) = setup(1, 4);
        let s = c.start_sample("bisect", 0, 0).unwrap().session_id;
        c.cancel_session(&s).unwrap();
        c.start_sample("bisect", 1, 0).unwrap();
        clock.advance(Duration::from_secs(601));
        assert_eq!(c.purge_terminal(clock.now()), 1);
        assert_eq!(c.list_sessions(None).len(), 1);
    }
}
