//! Domain types for multi-turn tasks with token-factorized actions.

pub mod grammar;
pub mod record;
pub mod tool;
pub mod trajectory;
pub mod validate;
pub mod vocab;

pub use grammar::{ActionGrammar, Decoding, Next};
pub use record::{StepLine, TrajectoryLine};
pub use tool::{
    decode_action, domain_tokens, serialize_action, ActionError, ArgDomain, ArgField, ArgValue,
    TaskSpec, ToolCall, ToolSchema,
};
pub use trajectory::{
    trajectory_return, Action, CompositeState, PolicyId, StepRecord, TerminalStatus, Trajectory,
    TrajectoryGroup,
};
pub use validate::{validate_trajectory, Violation};
pub use vocab::{TokenId, Vocabulary, BOS, OBS};
