//! Episode loops for the single, cross-policy and mix strategies.
//!
//! Every strategy drives the same gateway call sequence: `start_sample`,
//! then `interact` until the session ends.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::error::SamplingError;
use super::pool::PolicyPool;
use crate::algorithms::{sample_action, unified_reward, LinearSoftmaxPolicy};
use crate::domain::{
    decode_action, Action, ActionError, ActionGrammar, ArgValue, CompositeState, Decoding, StepRecord,
    TaskSpec, TerminalStatus, TokenId, ToolCall, Trajectory, Vocabulary, BOS, OBS,
};
use crate::envs::{Gateway, SessionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Single,
    Mix,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutStrategy {
    pub kind: StrategyKind,
    pub seed: u64,
}

/// Which sample to play and how to decode.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    pub spec: &'a TaskSpec,
    pub sample_id: u64,
    pub seed: u64,
    pub temperature: f64,
    pub decoding: Decoding,
}

impl<'a> Episode<'a> {
    pub fn new(spec: &'a TaskSpec, sample_id: u64, seed: u64, temperature: f64) -> Self {
        Episode {
            spec,
            sample_id,
            seed,
            temperature,
            decoding: Decoding::Constrained,
        }
    }

    pub fn with_decoding(mut self, decoding: Decoding) -> Self {
        self.decoding = decoding;
        self
    }
}

/// The episode was abandoned because of a shutdown request; its session has
/// been cancelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interrupted;

enum Chooser {
    Fixed(usize),
    Uniform,
}

fn status_of(state: SessionState) -> TerminalStatus {
    match state {
        SessionState::Completed => TerminalStatus::Completed,
        SessionState::TaskLimitReached => TerminalStatus::TaskLimitReached,
        SessionState::Running | SessionState::Error | SessionState::Timeout => TerminalStatus::EnvError,
    }
}

/// Builds the call to send for `tokens`, or `None` when they cannot start a
/// call at all. Tool names outside the task and out-of-domain values are
/// still sent; the environment answers them with an error observation.
fn call_for(tokens: &[TokenId], spec: &TaskSpec, vocab: &Vocabulary) -> Option<ToolCall> {
    match decode_action(tokens, &spec.tool_schemas, vocab) {
        Ok(call) => Some(call),
        Err(ActionError::NotAToolToken(_)) | Err(ActionError::Length { expected: 1, got: 0 }) => None,
        Err(_) => {
            let name = vocab.tool_name(tokens[0])?;
            let mut call = ToolCall::new(name);
            if let Some(schema) = spec.schema(name) {
                for (field, &tok) in schema.args.iter().zip(&tokens[1..]) {
                    let value = match (vocab.int_value(tok), vocab.word_text(tok)) {
                        (Some(i), _) => ArgValue::Int(i),
                        (None, Some(w)) => ArgValue::Str(w.to_string()),
                        (None, None) => return None,
                    };
                    call.args.insert(field.name.clone(), value);
                }
            }
            Some(call)
        }
    }
}

fn finish(mut traj: Trajectory, status: TerminalStatus, reward: Option<f64>, correct: Option<bool>) -> Trajectory {
    traj.terminal_status = status;
    traj.final_reward = match unified_reward(status, reward, correct) {
        Ok(r) => r,
        Err(e) => {
            if status != TerminalStatus::EnvError {
                tracing::warn!(error = %e, task = %traj.task_id, "unscorable episode");
            }
            0.0
        }
    };
    traj
}

fn run<R: Rng + ?Sized>(
    gateway: &dyn Gateway,
    ep: &Episode<'_>,
    policies: &[Arc<LinearSoftmaxPolicy>],
    chooser: Chooser,
    rng: &mut R,
    stop: Option<&AtomicBool>,
) -> Result<Trajectory, Interrupted> {
    let vocab = Vocabulary::standard();
    let grammar = ActionGrammar::new(ep.spec, ep.decoding, vocab);
    let traj = Trajectory {
        task_id: ep.spec.task_id.clone(),
        sample_id: ep.sample_id,
        steps: Vec::new(),
        terminal_status: TerminalStatus::EnvError,
        final_reward: 0.0,
        decoding: ep.decoding,
    };
    let started = match gateway.start_sample(&ep.spec.task_id, ep.sample_id, ep.seed) {
        Ok(s) => s,
        Err(e) => {
            tracing::debug!(error = %e, "start_sample failed");
            return Ok(finish(traj, TerminalStatus::EnvError, None, None));
        }
    };
    let sid = started.session_id;
    let mut traj = traj;
    let mut ctx = vec![BOS];
    ctx.extend(vocab.tokenize(&started.observation));
    for _ in 0..ep.spec.max_turns {
        if stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
            let _ = gateway.cancel(&sid);
            return Err(Interrupted);
        }
        let member = match chooser {
            Chooser::Fixed(i) => i,
            Chooser::Uniform if policies.len() == 1 => 0,
            Chooser::Uniform => rng.random_range(0..policies.len()),
        };
        let policy = &policies[member];
        let sampled = sample_action(policy, &ctx, &grammar, ep.temperature, rng);
        let call = if sampled.truncated {
            None
        } else {
            call_for(&sampled.tokens, ep.spec, vocab)
        };
        let mut step = StepRecord {
            state: CompositeState {
                env_handle: sid.clone(),
                ctx_tokens: ctx.clone(),
            },
            action: Action {
                tokens: sampled.tokens,
                call: call.clone(),
            },
            reward: 0.0,
            token_logprobs: sampled.logprobs,
            behavior_policy: policy.id(),
        };
        let Some(call) = call else {
            traj.steps.push(step);
            let _ = gateway.cancel(&sid);
            let status = if sampled.truncated {
                TerminalStatus::LengthLimit
            } else {
                TerminalStatus::ProtocolError
            };
            return Ok(finish(traj, status, None, None));
        };
        let result = match gateway.interact(&sid, &call) {
            Ok(r) => r,
            Err(e) => {
                tracing::debug!(error = %e, session = %sid, "interact failed");
                traj.steps.push(step);
                let _ = gateway.cancel(&sid);
                return Ok(finish(traj, TerminalStatus::EnvError, None, None));
            }
        };
        ctx.extend_from_slice(&step.action.tokens);
        ctx.push(OBS);
        ctx.extend(vocab.tokenize(&result.observation));
        if result.done || result.status.is_terminal() {
            traj.steps.push(step);
            return Ok(finish(traj, status_of(result.status), result.reward, result.correct));
        }
        step.reward = result.reward.unwrap_or(0.0);
        traj.steps.push(step);
    }
    // the service should have ended the session at the turn limit
    let _ = gateway.cancel(&sid);
    Ok(finish(traj, TerminalStatus::TaskLimitReached, None, None))
}

/// Every step sampled from `policy`.
pub fn single_rollout<R: Rng + ?Sized>(
    policy: &Arc<LinearSoftmaxPolicy>,
    gateway: &dyn Gateway,
    ep: &Episode<'_>,
    rng: &mut R,
) -> Trajectory {
    run(gateway, ep, std::slice::from_ref(policy), Chooser::Fixed(0), rng, None).expect("no stop flag")
}

/// Each step's whole action comes from a pool member drawn uniformly at that
/// step. A singleton pool makes no draws, so it replays `single_rollout`.
pub fn cross_policy_rollout<R: Rng + ?Sized>(
    pool: &PolicyPool,
    gateway: &dyn Gateway,
    ep: &Episode<'_>,
    rng: &mut R,
) -> Trajectory {
    run(gateway, ep, pool.members(), Chooser::Uniform, rng, None).expect("no stop flag")
}

/// `n` episodes, half from each member of a two-member pool, alternating
/// A, B, A, B.
pub fn mix_rollout<R: Rng + ?Sized>(
    pool: &PolicyPool,
    gateway: &dyn Gateway,
    ep: &Episode<'_>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>, SamplingError> {
    if pool.len() != 2 {
        return Err(SamplingError::PoolSize(pool.len()));
    }
    if !n.is_multiple_of(2) {
        return Err(SamplingError::OddCount(n));
    }
    Ok((0..n)
        .map(|i| single_rollout(pool.get(i % 2), gateway, ep, rng))
        .collect())
}

/// One rollout under `kind`. For `Mix` the member alternates with `index`.
pub fn rollout_with<R: Rng + ?Sized>(
    kind: StrategyKind,
    pool: &PolicyPool,
    gateway: &dyn Gateway,
    ep: &Episode<'_>,
    index: usize,
    rng: &mut R,
    stop: Option<&AtomicBool>,
) -> Result<Trajectory, Interrupted> {
    let chooser = match kind {
        StrategyKind::Single => Chooser::Fixed(pool.fresh_index()),
        StrategyKind::Mix => Chooser::Fixed(index % pool.len()),
        StrategyKind::Cross => Chooser::Uniform,
    };
    run(gateway, ep, pool.members(), chooser, rng, stop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{action_logprob, FeatureConfig};
    use crate::domain::validate_trajectory;
    use crate::envs::{local_controller, ControllerConfig, SystemClock, TaskRegistry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_policy(seed: u64, lineage: u32) -> Arc<LinearSoftmaxPolicy> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LinearSoftmaxPolicy::zeros(FeatureConfig::default(), Vocabulary::standard().len())
            .with_lineage(lineage);
        for w in p.weights_mut() {
            *w = rng.random_range(-0.5..0.5);
        }
        Arc::new(p)
    }

    #[test]
    fn rollouts_validate_and_rescore() {
        let c = local_controller(ControllerConfig::default(), Arc::new(SystemClock::new()), 1);
        let reg = TaskRegistry::standard();
        let pool = PolicyPool::new(vec![random_policy(1, 1), random_policy(2, 2)], 0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for spec in reg.specs() {
            for s in 0..5 {
                let ep = Episode::new(&spec, s, 3, 0.8);
                let t = cross_policy_rollout(&pool, c.as_ref(), &ep, &mut rng);
                validate_trajectory(&t, &spec).unwrap();
                assert_ne!(t.terminal_status, TerminalStatus::EnvError);
                let grammar = ActionGrammar::new(&spec, Decoding::Constrained, Vocabulary::standard());
                for step in &t.steps {
                    let member = pool
                        .members()
                        .iter()
                        .find(|m| m.id() == step.behavior_policy)
                        .unwrap();
                    let (_, per) = action_logprob(member, &step.state.ctx_tokens, &step.action.tokens, &grammar, 0.8);
                    for (a, b) in per.iter().zip(&step.token_logprobs) {
                        assert!((a - b).abs() < 1e-9);
                    }
                }
            }
        }
        assert_eq!(c.live_total(), 0);
    }

    #[test]
    fn singleton_cross_equals_single() {
        let c = local_controller(ControllerConfig::default(), Arc::new(SystemClock::new()), 1);
        let spec = TaskRegistry::standard().spec("kvstore").unwrap().clone();
        let p = random_policy(5, 1);
        let ep = Episode::new(&spec, 4, 4, 0.8);
        let a = single_rollout(&p, c.as_ref(), &ep, &mut ChaCha8Rng::seed_from_u64(1));
        let b = cross_policy_rollout(&PolicyPool::single(p), c.as_ref(), &ep, &mut ChaCha8Rng::seed_from_u64(1));
        let strip = |t: &Trajectory| {
            let mut t = t.clone();
            for s in &mut t.steps {
                s.state.env_handle.clear();
            }
            serde_json::to_string(&t).unwrap()
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn free_decoding_reports_protocol_errors() {
        let c = local_controller(ControllerConfig::default(), Arc::new(SystemClock::new()), 1);
        let spec = TaskRegistry::standard().spec("bisect").unwrap().clone();
        let p = Arc::new(LinearSoftmaxPolicy::zeros(FeatureConfig::small(8), Vocabulary::standard().len()));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut statuses = std::collections::HashSet::new();
        for s in 0..40 {
            let ep = Episode::new(&spec, s, 1, 1.0).with_decoding(Decoding::Free);
            let t = single_rollout(&p, c.as_ref(), &ep, &mut rng);
            validate_trajectory(&t, &spec).unwrap();
            statuses.insert(t.terminal_status);
        }
        assert!(statuses.contains(&TerminalStatus::ProtocolError));
        assert_eq!(c.live_total(), 0);
    }

    #[test]
    fn mix_halves() {
        let c = local_controller(ControllerConfig::default(), Arc::new(SystemClock::new()), 1);
        let spec = TaskRegistry::standard().spec("gridtext").unwrap().clone();
        let pool = PolicyPool::new(vec![random_policy(1, 1), random_policy(2, 2)], 0, 4).unwrap();
        let ep = Episode::new(&spec, 0, 0, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = mix_rollout(&pool, c.as_ref(), &ep, 8, &mut rng).unwrap();
        let from_a = out.iter().filter(|t| t.steps[0].behavior_policy.lineage == 1).count();
        assert_eq!(from_a, 4);
        assert!(out.iter().all(|t| t.steps.iter().all(|s| s.behavior_policy == t.steps[0].behavior_policy)));
        assert_eq!(mix_rollout(&pool, c.as_ref(), &ep, 3, &mut rng).unwrap_err(), SamplingError::OddCount(3));
    }
}
