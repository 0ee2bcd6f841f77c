use std::fmt;

use super::tool::TaskSpec;
use super::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TaskMismatch { expected: String, got: String },
    TurnLimit { steps: usize, max_turns: usize },
    /// Step `step`'s context does not extend step `step - 1`'s context.
    Prefix { step: usize },
    ActionLength { step: usize, len: usize, max: usize },
    LogprobLength { step: usize, tokens: usize, logprobs: usize },
    LogprobRange { step: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TaskMismatch { expected, got } => {
                write!(f, "task mismatch: expected {expected}, got {got}")
            }
            Violation::TurnLimit { steps, max_turns } => {
                write!(f, "turn limit: {steps} steps exceeds max_turns {max_turns}")
            }
            Violation::Prefix { step } => write!(f, "prefix: step {step} context does not extend its predecessor"),
            Violation::ActionLength { step, len, max } => {
                write!(f, "action length: step {step} has {len} tokens (allowed 1..={max})")
            }
            Violation::LogprobLength { step, tokens, logprobs } => {
                write!(f, "logprob length: step {step} has {tokens} tokens but {logprobs} logprobs")
            }
            Violation::LogprobRange { step, value } => {
                write!(f, "logprob range: step {step} has logprob {value}")
            }
        }
    }
}

/// Structural checks on a recorded trajectory. Collects every violation
/// instead of stopping at the first.
pub fn validate_trajectory(traj: &Trajectory, spec: &TaskSpec) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if traj.task_id != spec.task_id {
        out.push(Violation::TaskMismatch {
            expected: spec.task_id.clone(),
            got: traj.task_id.clone(),
        });
    }
    if traj.steps.len() > spec.max_turns {
        out.push(Violation::TurnLimit {
            steps: traj.steps.len(),
            max_turns: spec.max_turns,
        });
    }
    for (t, step) in traj.steps.iter().enumerate() {
        let len = step.action.tokens.len();
        if len == 0 || len > spec.max_action_tokens {
            out.push(Violation::ActionLength {
                step: t,
                len,
                max: spec.max_action_tokens,
            });
        }
        if step.token_logprobs.len() != len {
            out.push(Violation::LogprobLength {
                step: t,
                tokens: len,
                logprobs: step.token_logprobs.len(),
            });
        }
        if let Some(&bad) = step
            .token_logprobs
            .iter()
            .find(|lp| !lp.is_finite() || **lp > 0.0)
        {
            out.push(Violation::LogprobRange { step: t, value: bad });
        }
        if t > 0 {
            let prev = &traj.steps[t - 1];
            let prev_ctx = &prev.state.ctx_tokens;
            let ctx = &step.state.ctx_tokens;
            let extends = ctx.len() > prev_ctx.len()
                && ctx.starts_with(prev_ctx)
                && ctx[prev_ctx.len()..].starts_with(&prev.action.tokens);
            if !extends {
                out.push(Violation::Prefix { step: t });
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
