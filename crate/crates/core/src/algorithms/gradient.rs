//! Surrogate objective and its exact gradient for the linear-softmax policy.
//!
//! For a recorded token `y` with features `φ` and allowed set `S`,
//! `log p(y) = z_y/T - logsumexp_{v∈S}(z_v/T)` with `z_v = Σ_f φ_f W[f,v]`,
//! so `∂ log p(y) / ∂W[f,v] = φ_f/T · (1[v=y] - p_v)` for `v ∈ S`.
//! A clipped term contributes `Â·ρ·∇log p` while its unclipped branch is the
//! active one and nothing otherwise.

use super::advantage::AdvantageBatch;
use super::error::AlgoError;
use super::hyper::{HyperParams, ObjectiveKind};
use super::objective::{clip_term, unclipped_branch_active};
use super::policy::{FeatureConfig, Features, LinearSoftmaxPolicy};
use crate::domain::{ActionGrammar, Decoding, TaskSpec, TokenId, TrajectoryGroup, Vocabulary};

/// One recorded token, ready for re-scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSample {
    pub features: Features,
    pub allowed: Vec<TokenId>,
    /// Index of the recorded token inside `allowed`.
    pub chosen: usize,
    pub behavior_logprob: f64,
    pub advantage: f64,
}

/// Tokens laid out as `[group][member][token]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurrogateBatch {
    pub groups: Vec<Vec<Vec<TokenSample>>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateStats {
    pub objective: f64,
    /// Mean of `logp_current - logp_behavior` over tokens.
    pub kl: f64,
    /// Fraction of tokens whose clipped branch is active.
    pub clip_fraction: f64,
    pub tokens: usize,
}

impl SurrogateBatch {
    pub fn token_count(&self) -> usize {
        self.groups.iter().flatten().map(Vec::len).sum()
    }

    /// Pairs every recorded token of `groups` with its advantage from `adv`
    /// (group `g` of `adv` must be `groups[g]`) and with the allowed set of
    /// the grammar it was sampled under.
    pub fn from_trajectories(
        features: &FeatureConfig,
        groups: &[TrajectoryGroup],
        adv: &AdvantageBatch,
        specs: &[TaskSpec],
    ) -> Result<Self, AlgoError> {
        let vocab = Vocabulary::standard();
        let lookup = adv.nested();
        let mut grammars: Vec<((String, Decoding), ActionGrammar)> = Vec::new();
        let mut out = Vec::with_capacity(groups.len());
        for (gi, group) in groups.iter().enumerate() {
            let mut members = Vec::with_capacity(group.trajectories.len());
            for (ti, traj) in group.trajectories.iter().enumerate() {
                let key = (traj.task_id.clone(), traj.decoding);
                let pos = match grammars.iter().position(|(k, _)| *k == key) {
                    Some(p) => p,
                    None => {
                        let spec = specs
                            .iter()
                            .find(|s| s.task_id == traj.task_id)
                            .ok_or_else(|| AlgoError::UnknownTask(traj.task_id.clone()))?;
                        grammars.push((key, ActionGrammar::new(spec, traj.decoding, vocab)));
                        grammars.len() - 1
                    }
                };
                let grammar = &grammars[pos].1;
                let mut tokens = Vec::with_capacity(traj.token_count());
                for (si, step) in traj.steps.iter().enumerate() {
                    let action = &step.action.tokens;
                    if step.token_logprobs.len() != action.len() {
                        return Err(AlgoError::MissingLogprobs {
                            traj: ti,
                            step: si,
                            tokens: action.len(),
                            logprobs: step.token_logprobs.len(),
                        });
                    }
                    let mut ctx = step.state.ctx_tokens.clone();
                    for (k, &tok) in action.iter().enumerate() {
                        let allowed = grammar.allowed_at(action, k);
                        let chosen = allowed
                            .iter()
                            .position(|&a| a == tok)
                            .ok_or(AlgoError::TokenOutsideGrammar { token: tok })?;
                        let behavior_logprob = step.token_logprobs[k];
                        if !(behavior_logprob.is_finite() && behavior_logprob <= 0.0) {
                            return Err(AlgoError::InvalidLogprob(behavior_logprob));
                        }
                        let advantage = *lookup
                            .get(&(gi as u32, ti as u32, si as u32, k as u32))
                            .ok_or(AlgoError::LengthMismatch {
                                expected: traj.token_count(),
                                got: k,
                            })?;
                        tokens.push(TokenSample {
                            features: features.extract(&ctx),
                            allowed: allowed.to_vec(),
                            chosen,
                            behavior_logprob,
                            advantage,
                        });
                        ctx.push(tok);
                    }
                }
                members.push(tokens);
            }
            out.push(members);
        }
        Ok(SurrogateBatch { groups: out })
    }

    /// Per-token weight of each clipped term in the objective.
    fn term_weights(&self, kind: ObjectiveKind) -> Vec<Vec<f64>> {
        let total = self.token_count().max(1) as f64;
        let n_groups = self.groups.len().max(1) as f64;
        self.groups
            .iter()
            .map(|members| {
                members
                    .iter()
                    .map(|toks| match kind {
                        ObjectiveKind::Dapo => 1.0 / total,
                        ObjectiveKind::Grpo => {
                            1.0 / (n_groups * members.len() as f64 * toks.len().max(1) as f64)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

fn check(batch: &SurrogateBatch, hp: &HyperParams) -> Result<(), AlgoError> {
    if !(hp.temperature > 0.0) {
        return Err(AlgoError::InvalidHyperParams(
            "training needs a positive temperature".into(),
        ));
    }
    if batch.groups.is_empty() || batch.groups.iter().any(Vec::is_empty) {
        return Err(AlgoError::EmptyBatch);
    }
    if batch.token_count() == 0 {
        return Err(AlgoError::ZeroTokens);
    }
    Ok(())
}

fn clip_bounds(hp: &HyperParams) -> (f64, f64) {
    match hp.objective {
        ObjectiveKind::Grpo => (hp.clip_eps, hp.clip_eps),
        ObjectiveKind::Dapo => (hp.clip_eps_low, hp.clip_eps_high),
    }
}

/// Value of the surrogate objective under the current policy.
pub fn surrogate(
    policy: &LinearSoftmaxPolicy,
    batch: &SurrogateBatch,
    hp: &HyperParams,
) -> Result<SurrogateStats, AlgoError> {
    walk(policy, batch, hp, None)
}

/// Surrogate value plus its gradient with respect to every weight, laid out
/// like [`LinearSoftmaxPolicy::weights`].
pub fn surrogate_gradient(
    policy: &LinearSoftmaxPolicy,
    batch: &SurrogateBatch,
    hp: &HyperParams,
) -> Result<(Vec<f64>, SurrogateStats), AlgoError> {
    let mut grad = vec![0.0; policy.weights().len()];
    let stats = walk(policy, batch, hp, Some(&mut grad))?;
    Ok((grad, stats))
}

fn walk(
    policy: &LinearSoftmaxPolicy,
    batch: &SurrogateBatch,
    hp: &HyperParams,
    mut grad: Option<&mut Vec<f64>>,
) -> Result<SurrogateStats, AlgoError> {
    check(batch, hp)?;
    let (lo, hi) = clip_bounds(hp);
    let t = hp.temperature;
    let weights = batch.term_weights(hp.objective);
    let total = batch.token_count() as f64;
    let v = policy.vocab_size();
    let mut objective = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    for (members, mw) in batch.groups.iter().zip(&weights) {
        for (toks, &w) in members.iter().zip(mw) {
            for tok in toks {
                let logps = policy.log_probs(&tok.features, &tok.allowed, t);
                let logp = logps[tok.chosen];
                let ratio = (logp - tok.behavior_logprob).exp();
                objective += w * clip_term(ratio, tok.advantage, lo, hi);
                kl += logp - tok.behavior_logprob;
                let active = unclipped_branch_active(ratio, tok.advantage, lo, hi);
                if !active {
                    clipped += 1;
                }
                let Some(g) = grad.as_deref_mut() else { continue };
                // d objective / d log p(y)
                let mut coef = -hp.kl_beta / total;
                if active {
                    coef += w * tok.advantage * ratio;
                }
                if coef == 0.0 {
                    continue;
                }
                for &(row, phi) in &tok.features {
                    let scale = coef * phi / t;
                    let base = row as usize * v;
                    for (i, (&a, lp)) in tok.allowed.iter().zip(&logps).enumerate() {
                        let indicator = if i == tok.chosen { 1.0 } else { 0.0 };
                        g[base + a as usize] += scale * (indicator - lp.exp());
                    }
                }
            }
        }
    }
    let kl = kl / total;
    Ok(SurrogateStats {
        objective: objective - hp.kl_beta * kl,
        kl,
        clip_fraction: clipped as f64 / total,
        tokens: batch.token_count(),
    })
}

/// Exact gradient of the configured objective over trajectory groups whose
/// token advantages are given by `adv`.
pub fn policy_gradient(
    policy: &LinearSoftmaxPolicy,
    groups: &[TrajectoryGroup],
    adv: &AdvantageBatch,
    specs: &[TaskSpec],
    hp: &HyperParams,
) -> Result<Vec<f64>, AlgoError> {
    let batch = SurrogateBatch::from_trajectories(policy.feature_config(), groups, adv, specs)?;
    surrogate_gradient(policy, &batch, hp).map(|(g, _)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64) -> (LinearSoftmaxPolicy, SurrogateBatch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = 8;
        let dim = 20;
        let mut policy = LinearSoftmaxPolicy::zeros(FeatureConfig::small(dim), vocab);
        for w in policy.weights_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        let mut groups = Vec::new();
        for _ in 0..rng.random_range(1..3) {
            let mut members = Vec::new();
            for _ in 0..rng.random_range(2..4) {
                let mut toks = Vec::new();
                for _ in 0..rng.random_range(1..4) {
                    let features: Features = (0..3)
                        .map(|_| (rng.random_range(0..dim as u32), 1.0))
                        .collect();
                    let mut allowed: Vec<TokenId> = (0..vocab as u32).filter(|_| rng.random_bool(0.6)).collect();
                    if allowed.len() < 2 {
                        allowed = vec![0, 1];
                    }
                    toks.push(TokenSample {
                        features,
                        chosen: rng.random_range(0..allowed.len()),
                        allowed,
                        behavior_logprob: 0.0,
                        advantage: rng.random_range(-2.0..2.0),
                    });
                }
                members.push(toks);
            }
            groups.push(members);
        }
        let mut batch = SurrogateBatch { groups };
        // keep every ratio well away from the clip boundaries
        for tok in batch.groups.iter_mut().flatten().flatten() {
            let lp = policy.log_probs(&tok.features, &tok.allowed, 0.8)[tok.chosen];
            let ratio = match rng.random_range(0..3) {
                0 => rng.random_range(0.5..0.7),
                1 => rng.random_range(0.9..1.1),
                _ => rng.random_range(1.4..1.7),
            };
            tok.behavior_logprob = lp - f64::ln(ratio);
        }
        (policy, batch)
    }

    #[allow(clippy::needless_range_loop)]
    fn finite_difference_error(kind: ObjectiveKind, beta: f64, seed: u64) -> f64 {
        let (mut policy, batch) = random_instance(seed);
        let hp = HyperParams {
            objective: kind,
            kl_beta: beta,
            ..HyperParams::default()
        };
        let (grad, _) = surrogate_gradient(&policy, &batch, &hp).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..policy.weights().len() {
            let w0 = policy.weights()[i];
            policy.weights_mut()[i] = w0 + h;
            let up = surrogate(&policy, &batch, &hp).unwrap().objective;
            policy.weights_mut()[i] = w0 - h;
            let down = surrogate(&policy, &batch, &hp).unwrap().objective;
            policy.weights_mut()[i] = w0;
            let fd = (up - down) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((grad[i] - fd).abs() / denom);
        }
        worst
    }

    #[test]
    fn matches_finite_differences() {
        for seed in 0..10 {
            assert!(finite_difference_error(ObjectiveKind::Grpo, 0.0, seed) < 1e-4);
            assert!(finite_difference_error(ObjectiveKind::Dapo, 0.1, seed) < 1e-4);
        }
    }

    #[test]
    fn zero_advantage_gives_zero_gradient() {
        let (policy, mut batch) = random_instance(7);
        for tok in batch.groups.iter_mut().flatten().flatten() {
            tok.advantage = 0.0;
        }
        let (grad, _) = surrogate_gradient(&policy, &batch, &HyperParams::default()).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn on_policy_single_token_closed_form() {
        let t = 0.8;
        let mut policy = LinearSoftmaxPolicy::zeros(FeatureConfig::small(4), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for w in policy.weights_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        let features: Features = vec![(1, 1.0), (3, 1.0)];
        let allowed: Vec<TokenId> = vec![0, 2, 3, 4];
        let logps = policy.log_probs(&features, &allowed, t);
        let adv = 0.7;
        let batch = SurrogateBatch {
            groups: vec![vec![vec![TokenSample {
                features: features.clone(),
                allowed: allowed.clone(),
                chosen: 2,
                behavior_logprob: logps[2],
                advantage: adv,
            }]]],
        };
        let hp = HyperParams {
            temperature: t,
            ..HyperParams::default()
        };
        let (grad, stats) = surrogate_gradient(&policy, &batch, &hp).unwrap();
        assert!((stats.objective - adv).abs() < 1e-12);
        for row in 0..4 {
            let phi = features.iter().filter(|(r, _)| *r == row).map(|(_, v)| v).sum::<f64>();
            for tok in 0..5u32 {
                let expected = match allowed.iter().position(|&a| a == tok) {
                    Some(i) => {
                        let e = if i == 2 { 1.0 } else { 0.0 };
                        adv * (e - logps[i].exp()) * phi / t
                    }
                    None => 0.0,
                };
                assert!((grad[row as usize * 5 + tok as usize] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clipped_branch_has_no_gradient() {
        let mut policy = LinearSoftmaxPolicy::zeros(FeatureConfig::small(2), 3);
        policy.set_weight(0, 1, 0.3);
        let features: Features = vec![(0, 1.0)];
        let allowed: Vec<TokenId> = vec![0, 1, 2];
        let lp = policy.log_probs(&features, &allowed, 0.8)[1];
        let batch = SurrogateBatch {
            groups: vec![vec![vec![TokenSample {
                features,
                allowed,
                chosen: 1,
                // ratio 2 with positive advantage sits on the flat clipped branch
                behavior_logprob: lp - 2f64.ln(),
                advantage: 1.0,
            }]]],
        };
        let (grad, stats) = surrogate_gradient(&policy, &batch, &HyperParams::default()).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
        assert_eq!(stats.clip_fraction, 1.0);
        assert!((stats.objective - 1.2).abs() < 1e-12);
    }

    #[test]
    fn zero_temperature_is_rejected() {
        let (policy, batch) = random_instance(2);
        let hp = HyperParams {
            temperature: 0.0,
            ..HyperParams::default()
        };
        assert!(surrogate(&policy, &batch, &hp).is_err());
    }
}
