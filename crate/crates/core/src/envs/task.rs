//! Environment interface, session states, and the task registry.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{TaskSpec, ToolCall, ToolSchema};

/// Lifecycle state of a session, as reported by workers and the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Running,
    Completed,
    TaskLimitReached,
    Error,
    Timeout,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        self != SessionState::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Running => "running",
            SessionState::Completed => "completed",
            SessionState::TaskLimitReached => "task_limit_reached",
            SessionState::Error => "error",
            SessionState::Timeout => "timeout",
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What one environment transition reports back to the environment host.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvOutcome {
    pub observation: String,
    /// Intrinsic reward in `[0, 1]`, for environments that define one.
    pub reward: Option<f64>,
    pub done: bool,
    /// Binary verdict, for environments judged right or wrong.
    pub correct: Option<bool>,
}

impl EnvOutcome {
    pub fn cont(observation: impl Into<String>) -> Self {
        EnvOutcome {
            observation: observation.into(),
            reward: None,
            done: false,
            correct: None,
        }
    }

    pub fn verdict(observation: impl Into<String>, correct: bool) -> Self {
        EnvOutcome {
            observation: observation.into(),
            reward: None,
            done: true,
            correct: Some(correct),
        }
    }
}

/// Payload of one `interact` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: String,
    pub reward: Option<f64>,
    pub done: bool,
    pub status: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available_tools: Option<Vec<ToolSchema>>,
}

/// One episode of a task. Calls reaching `apply` already conform to the
/// task's tool schemas.
pub trait Environment: Send {
    fn initial_observation(&self) -> String;
    fn apply(&mut self, call: &ToolCall) -> EnvOutcome;
}

/// Builds episodes of one task, deterministically from `(sample_id, seed)`.
pub trait TaskFactory: Send + Sync {
    fn spec(&self) -> &TaskSpec;
    fn create(&self, sample_id: u64, seed: u64) -> Box<dyn Environment>;
}

/// Seed for the episode RNG of `(task, sample_id, seed)`.
pub fn episode_seed(task_id: &str, sample_id: u64, seed: u64) -> u64 {
    let mut h = crate::domain::vocab::fnv1a(task_id.as_bytes());
    for x in [sample_id, seed] {
        h ^= x;
        h = h.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(29);
    }
    h
}

#[derive(Clone, Default)]
pub struct TaskRegistry {
    tasks: BTreeMap<String, Arc<dyn TaskFactory>>,
}

impl fmt::Debug for TaskRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tasks.keys()).finish()
    }
}

impl TaskRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The three bundled toy tasks.
    pub fn standard() -> Self {
        let mut r = TaskRegistry::new();
        r.register(Arc::new(super::bisect::BisectGuess::new()));
        r.register(Arc::new(super::kvstore::KvStore::new()));
        r.register(Arc::new(super::gridtext::GridText::new()));
        r
    }

    pub fn register(&mut self, factory: Arc<dyn TaskFactory>) {
        self.tasks.insert(factory.spec().task_id.clone(), factory);
    }

    pub fn get(&self, task_id: &str) -> Option<&Arc<dyn TaskFactory>> {
        self.tasks.get(task_id)
    }

    pub fn spec(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.get(task_id).map(|f| f.spec())
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.keys().cloned().collect()
    }

    pub fn specs(&self) -> Vec<TaskSpec> {
        self.tasks.values().map(|f| f.spec().clone()).collect()
    }

    pub fn restrict(&self, task_ids: &[String]) -> Option<TaskRegistry> {
        let mut r = TaskRegistry::new();
        for id in task_ids {
            r.register(self.tasks.get(id)?.clone());
        }
        Some(r)
    }
}

/// One live episode on a worker: the environment plus turn bookkeeping.
pub struct EnvSession {
    spec: TaskSpec,
    env: Box<dyn Environment>,
    turns: usize,
    state: SessionState,
}

impl EnvSession {
    pub fn start(factory: &dyn TaskFactory, sample_id: u64, seed: u64) -> (Self, String) {
        let env = factory.create(sample_id, seed);
        let obs = env.initial_observation();
        (
            EnvSession {
                spec: factory.spec().clone(),
                env,
                turns: 0,
                state: SessionState::Running,
            },
            obs,
        )
    }

    pub fn turns(&self) -> usize {
        self.turns
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// Applies one call. Calls that do not fit the task's schemas consume a
    /// turn and come back as an "invalid call" observation.
    pub fn interact(&mut self, call: &ToolCall) -> Result<StepResult, String> {
        if self.state.is_terminal() {
            return Err("session terminal".into());
        }
        let check = match self.spec.schema(&call.name) {
            None => Err("unknown tool".to_string()),
            Some(schema) => schema.check(call).map_err(|_| "invalid argument".to_string()),
        };
        let outcome = match check {
            Ok(()) => self.env.apply(call),
            Err(why) => EnvOutcome::cont(format!("invalid call {why}")),
        };
        self.turns += 1;
        let (done, status) = if outcome.done {
            (true, SessionState::Completed)
        } else if self.turns >= self.spec.max_turns {
            (true, SessionState::TaskLimitReached)
        } else {
            (false, SessionState::Running)
        };
        self.state = status;
        Ok(StepResult {
            observation: outcome.observation,
            reward: outcome.reward,
            done,
            status,
            correct: outcome.correct,
            available_tools: None,
        })
    }
}
