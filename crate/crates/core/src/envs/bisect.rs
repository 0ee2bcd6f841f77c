//! Number guessing with comparison feedback. Short horizon, binary reward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::task::{episode_seed, EnvOutcome, Environment, TaskFactory};
use crate::domain::{TaskSpec, ToolCall, ToolSchema};

pub const TASK_ID: &str = "bisect";
pub const RANGE: i64 = 16;
pub const MAX_TURNS: usize = 8;

pub struct BisectGuess {
    spec: TaskSpec,
}

impl BisectGuess {
    pub fn new() -> Self {
        BisectGuess {
            spec: TaskSpec::new(
                TASK_ID,
                vec![
                    ToolSchema::new("query").int_arg("x", 0, RANGE - 1),
                    ToolSchema::new("answer").int_arg("x", 0, RANGE - 1),
                ],
                MAX_TURNS,
            ),
        }
    }

    pub fn hidden_for(sample_id: u64, seed: u64) -> i64 {
        ChaCha8Rng::seed_from_u64(episode_seed(TASK_ID, sample_id, seed)).random_range(0..RANGE)
    }
}

impl Default for BisectGuess {
    fn default() -> Self {
        Self::new()
    }
}

impl TaskFactory for BisectGuess {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn create(&self, sample_id: u64, seed: u64) -> Box<dyn Environment> {
        Box::new(BisectEnv::with_hidden(Self::hidden_for(sample_id, seed)))
    }
}

#[derive(Debug, Clone)]
pub struct BisectEnv {
    hidden: i64,
}

impl BisectEnv {
    pub fn with_hidden(hidden: i64) -> Self {
        BisectEnv { hidden }
    }

    pub fn hidden(&self) -> i64 {
        self.hidden
    }
}

impl Environment for BisectEnv {
    fn initial_observation(&self) -> String {
        format!("guess number 0 {}", RANGE - 1)
    }

    fn apply(&mut self, call: &ToolCall) -> EnvOutcome {
        let x = call.int("x").unwrap_or(-1);
        match call.name.as_str() {
            "query" => EnvOutcome::cont(match self.hidden.cmp(&x) {
                std::cmp::Ordering::Greater => "higher",
                std::cmp::Ordering::Less => "lower",
                std::cmp::Ordering::Equal => "equal",
            }),
            _ => {
                let ok = x == self.hidden;
                EnvOutcome::verdict(if ok { "correct" } else { "wrong" }, ok)
            }
        }
    }
}
