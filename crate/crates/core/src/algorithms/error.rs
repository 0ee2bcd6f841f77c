use thiserror::Error;

use crate::domain::TerminalStatus;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgoError {
    #[error("group of size {0} is too small for group-relative advantages (need at least 2)")]
    GroupTooSmall(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("zero total tokens")]
    ZeroTokens,
    #[error("environment reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("status {0} carries no reward")]
    NotScorable(TerminalStatus),
    #[error("completed episode reported neither a reward nor a correctness flag")]
    MissingOutcome,
    #[error("step {step} of trajectory {traj} has {logprobs} behavior logprobs for {tokens} tokens")]
    MissingLogprobs {
        traj: usize,
        step: usize,
        tokens: usize,
        logprobs: usize,
    },
    #[error("ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("behavior logprob {0} is not a finite non-positive number")]
    InvalidLogprob(f64),
    #[error("recorded token {token} is not allowed by the grammar at this position")]
    TokenOutsideGrammar { token: u32 },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
}
