//! Key-value store repair. The agent reads and writes four slots and then
//! commits; the commit reward is the fraction of slots holding their target.
//!
//! Every observation ends with a three-token status: `need k v` naming the
//! first slot that differs from its target, or `all slots match`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::task::{episode_seed, EnvOutcome, Environment, TaskFactory};
use crate::domain::{TaskSpec, ToolCall, ToolSchema};

pub const TASK_ID: &str = "kvstore";
pub const SLOTS: usize = 4;
pub const VALUES: i64 = 8;
pub const MAX_TURNS: usize = 12;

pub struct KvStore {
    spec: TaskSpec,
}

impl KvStore {
    pub fn new() -> Self {
        KvStore {
            spec: TaskSpec::new(
                TASK_ID,
                vec![
                    ToolSchema::new("get").int_arg("k", 0, SLOTS as i64 - 1),
                    ToolSchema::new("put")
                        .int_arg("k", 0, SLOTS as i64 - 1)
                        .int_arg("v", 0, VALUES - 1),
                    ToolSchema::new("commit"),
                ],
                MAX_TURNS,
            ),
        }
    }

    /// Initial and target contents of a sample. Each slot starts out wrong
    /// with probability 1/2, and at least one slot is always wrong.
    pub fn contents_for(sample_id: u64, seed: u64) -> ([i64; SLOTS], [i64; SLOTS]) {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(TASK_ID, sample_id, seed));
        let mut target = [0; SLOTS];
        for t in &mut target {
            *t = rng.random_range(0..VALUES);
        }
        let mask = loop {
            let m: u32 = rng.random_range(0..1 << SLOTS);
            if m != 0 {
                break m;
            }
        };
        let mut initial = target;
        for (i, slot) in initial.iter_mut().enumerate() {
            if mask & (1 << i) != 0 {
                *slot = (target[i] + rng.random_range(1..VALUES)) % VALUES;
            }
        }
        (initial, target)
    }
}

impl Default for KvStore {
    fn default() -> Self {
        Self::new()
    }
}

impl TaskFactory for KvStore {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn create(&self, sample_id: u64, seed: u64) -> Box<dyn Environment> {
        let (initial, target) = Self::contents_for(sample_id, seed);
        Box::new(KvEnv::new(initial, target))
    }
}

#[derive(Debug, Clone)]
pub struct KvEnv {
    store: [i64; SLOTS],
    target: [i64; SLOTS],
}

impl KvEnv {
    pub fn new(store: [i64; SLOTS], target: [i64; SLOTS]) -> Self {
        KvEnv { store, target }
    }

    pub fn store(&self) -> [i64; SLOTS] {
        self.store
    }

    pub fn target(&self) -> [i64; SLOTS] {
        self.target
    }

    /// First mismatched slot, if any.
    pub fn first_mismatch(&self) -> Option<usize> {
        (0..SLOTS).find(|&i| self.store[i] != self.target[i])
    }

    fn status(&self) -> String {
        match self.first_mismatch() {
            Some(k) => format!("need {k} {}", self.target[k]),
            None => "all slots match".to_string(),
        }
    }
}

impl Environment for KvEnv {
    fn initial_observation(&self) -> String {
        format!("store ready {}", self.status())
    }

    fn apply(&mut self, call: &ToolCall) -> EnvOutcome {
        match call.name.as_str() {
            "get" => {
                let k = call.int("k").unwrap_or(0) as usize;
                EnvOutcome::cont(format!("slot {k} holds {} {}", self.store[k], self.status()))
            }
            "put" => {
                let k = call.int("k").unwrap_or(0) as usize;
                let v = call.int("v").unwrap_or(0);
                self.store[k] = v;
                EnvOutcome::cont(format!("stored {k} {v} {}", self.status()))
            }
            _ => {
                let right = (0..SLOTS).filter(|&i| self.store[i] == self.target[i]).count();
                EnvOutcome {
                    observation: format!("committed score {right}"),
                    reward: Some(right as f64 / SLOTS as f64),
                    done: true,
                    correct: None,
                }
            }
        }
    }
}
