//! Environment hosts. A worker runs sessions for the tasks it supports; the
//! controller addresses each session by its controller-assigned id.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::task::{EnvSession, StepResult, TaskRegistry};
use crate::domain::{ToolCall, ToolSchema};

pub trait Worker: Send + Sync {
    fn tasks(&self) -> Vec<String>;
    fn start(
        &self,
        handle: &str,
        task_id: &str,
        sample_id: u64,
        seed: u64,
    ) -> Result<(String, Vec<ToolSchema>), String>;
    fn interact(&self, handle: &str, call: &ToolCall) -> Result<StepResult, String>;
    /// Frees the session's resources. Unknown handles are ignored.
    fn release(&self, handle: &str);
    /// Liveness probe used for heartbeats.
    fn ping(&self) -> bool {
        true
    }
}

/// In-process worker hosting environments from a task registry.
pub struct LocalWorker {
    registry: TaskRegistry,
    sessions: Mutex<HashMap<String, Arc<Mutex<EnvSession>>>>,
}

impl LocalWorker {
    pub fn new(registry: TaskRegistry) -> Self {
        LocalWorker {
            registry,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }
}

impl Worker for LocalWorker {
    fn tasks(&self) -> Vec<String> {
        self.registry.task_ids()
    }

    fn start(
        &self,
        handle: &str,
        task_id: &str,
        sample_id: u64,
        seed: u64,
    ) -> Result<(String, Vec<ToolSchema>), String> {
        let factory = self
            .registry
            .get(task_id)
            .ok_or_else(|| format!("unknown task {task_id:?}"))?;
        let (session, obs) = EnvSession::start(factory.as_ref(), sample_id, seed);
        self.sessions
            .lock()
            .unwrap()
            .insert(handle.to_string(), Arc::new(Mutex::new(session)));
        Ok((obs, factory.spec().tool_schemas.clone()))
    }

    fn interact(&self, handle: &str, call: &ToolCall) -> Result<StepResult, String> {
        let session = self
            .sessions
            .lock()
            .unwrap()
            .get(handle)
            .cloned()
            .ok_or_else(|| format!("no session {handle:?} on this worker"))?;
        let result = session.lock().unwrap().interact(call);
        result
    }

    fn release(&self, handle: &str) {
        self.sessions.lock().unwrap().remove(handle);
    }
}
