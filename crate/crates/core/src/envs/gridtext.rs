//! Text gridworld: fetch an object and drop it on a target cell. Long
//! horizon, sparse binary reward.
//!
//! Observations are four words: the last event, `free` or `holding`, and the
//! north/south and east/west direction towards the object (when free) or the
//! target (when holding), each `level` once aligned.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::task::{episode_seed, EnvOutcome, Environment, TaskFactory};
use crate::domain::{TaskSpec, ToolCall, ToolSchema};

pub const TASK_ID: &str = "gridtext";
pub const SIZE: i64 = 4;
pub const MAX_TURNS: usize = 24;
pub const ACTIONS: [&str; 6] = ["north", "south", "east", "west", "pickup", "drop"];

pub type Cell = (i64, i64);

pub struct GridText {
    spec: TaskSpec,
}

impl GridText {
    pub fn new() -> Self {
        GridText {
            spec: TaskSpec::new(
                TASK_ID,
                vec![ToolSchema::new("take_action").enum_arg("a", &ACTIONS)],
                MAX_TURNS,
            ),
        }
    }

    /// Agent, object and target cells of a sample, all distinct.
    pub fn layout_for(sample_id: u64, seed: u64) -> (Cell, Cell, Cell) {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(TASK_ID, sample_id, seed));
        let picks = sample(&mut rng, (SIZE * SIZE) as usize, 3);
        let cell = |i: usize| ((i as i64) / SIZE, (i as i64) % SIZE);
        (cell(picks.index(0)), cell(picks.index(1)), cell(picks.index(2)))
    }
}

impl Default for GridText {
    fn default() -> Self {
        Self::new()
    }
}

impl TaskFactory for GridText {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn create(&self, sample_id: u64, seed: u64) -> Box<dyn Environment> {
        let (agent, object, target) = Self::layout_for(sample_id, seed);
        Box::new(GridEnv::new(agent, object, target))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridEnv {
    agent: Cell,
    /// `None` while carried.
    object: Option<Cell>,
    target: Cell,
}

fn toward(from: Cell, to: Cell) -> (&'static str, &'static str) {
    let ns = match to.0.cmp(&from.0) {
        std::cmp::Ordering::Less => "north",
        std::cmp::Ordering::Greater => "south",
        std::cmp::Ordering::Equal => "level",
    };
    let ew = match to.1.cmp(&from.1) {
        std::cmp::Ordering::Less => "west",
        std::cmp::Ordering::Greater => "east",
        std::cmp::Ordering::Equal => "level",
    };
    (ns, ew)
}

impl GridEnv {
    pub fn new(agent: Cell, object: Cell, target: Cell) -> Self {
        GridEnv {
            agent,
            object: Some(object),
            target,
        }
    }

    pub fn agent(&self) -> Cell {
        self.agent
    }

    pub fn object(&self) -> Option<Cell> {
        self.object
    }

    pub fn target(&self) -> Cell {
        self.target
    }

    fn describe(&self, event: &str) -> String {
        let (hold, goal) = match self.object {
            Some(o) => ("free", o),
            None => ("holding", self.target),
        };
        let (ns, ew) = toward(self.agent, goal);
        format!("{event} {hold} {ns} {ew}")
    }

    /// Applies one action name; returns the event word and whether the
    /// episode ended in success.
    pub fn act(&mut self, action: &str) -> (&'static str, bool) {
        let (r, c) = self.agent;
        let moved = match action {
            "north" => Some((r - 1, c)),
            "south" => Some((r + 1, c)),
            "east" => Some((r, c + 1)),
            "west" => Some((r, c - 1)),
            _ => None,
        };
        if let Some((nr, nc)) = moved {
            if (0..SIZE).contains(&nr) && (0..SIZE).contains(&nc) {
                self.agent = (nr, nc);
                return ("moved", false);
            }
            return ("blocked", false);
        }
        match (action, self.object) {
            ("pickup", Some(o)) if o == self.agent => {
                self.object = None;
                ("picked", false)
            }
            ("drop", None) => {
                self.object = Some(self.agent);
                if self.agent == self.target {
                    ("success", true)
                } else {
                    ("dropped", false)
                }
            }
            _ => ("nothing", false),
        }
    }
}

impl Environment for GridEnv {
    fn initial_observation(&self) -> String {
        self.describe("start")
    }

    fn apply(&mut self, call: &ToolCall) -> EnvOutcome {
        let (event, success) = self.act(call.str("a").unwrap_or(""));
        let obs = self.describe(event);
        if success {
            EnvOutcome::verdict(obs, true)
        } else {
            EnvOutcome::cont(obs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(a: &str) -> ToolCall {
        ToolCall::new("take_action").arg("a", a)
    }

    #[test]
    fn fetch_and_deliver() {
        let mut env = GridEnv::new((0, 0), (0, 1), (2, 1));
        assert_eq!(env.initial_observation(), "start free level east");
        assert_eq!(env.apply(&call("north")).observation, "blocked free level east");
        assert_eq!(env.apply(&call("pickup")).observation, "nothing free level east");
        assert_eq!(env.apply(&call("east")).observation, "moved free level level");
        assert_eq!(env.apply(&call("pickup")).observation, "picked holding south level");
        assert_eq!(env.apply(&call("south")).observation, "moved holding south level");
        let r = env.apply(&call("drop"));
        assert_eq!(r.observation, "dropped free level level");
        assert!(!r.done);
        env.apply(&call("pickup"));
        env.apply(&call("south"));
        let r = env.apply(&call("drop"));
        assert!(r.done);
        assert_eq!(r.correct, Some(true));
    }

    #[test]
    fn layouts_are_distinct_cells() {
        for s in 0..100 {
            let (a, o, t) = GridText::layout_for(s, 5);
            assert!(a != o && o != t && a != t);
            for (r, c) in [a, o, t] {
                assert!((0..SIZE).contains(&r) && (0..SIZE).contains(&c));
            }
        }
    }
}
