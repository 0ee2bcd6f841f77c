//! Clipped surrogate objectives: PPO term, GRPO group objective, DAPO.

use super::error::AlgoError;
use crate::domain::{Trajectory, TrajectoryGroup};

/// `min(ρ·A, clip(ρ, 1-ε, 1+ε)·A)`.
pub fn ppo_clip_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    clip_term(ratio, advantage, eps, eps)
}

/// Decoupled-bound variant: `min(ρ·A, clip(ρ, 1-ε_low, 1+ε_high)·A)`.
pub fn clip_term(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    (ratio * advantage).min(clipped * advantage)
}

/// True when the unclipped branch is the one selected by the `min`, i.e.
/// the term still depends on the ratio.
pub fn unclipped_branch_active(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> bool {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    ratio * advantage <= clipped * advantage
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioAdvantage {
    pub ratio: f64,
    pub advantage: f64,
}

impl RatioAdvantage {
    pub fn new(ratio: f64, advantage: f64) -> Self {
        RatioAdvantage { ratio, advantage }
    }
}

/// Mean over groups of the mean clipped term over members, minus
/// `beta · mean(kl_estimates)` (skipped entirely when `beta == 0`).
pub fn grpo_objective(
    groups: &[Vec<RatioAdvantage>],
    eps: f64,
    beta: f64,
    kl_estimates: &[f64],
) -> Result<f64, AlgoError> {
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(AlgoError::EmptyBatch);
    }
    let mut total = 0.0;
    for group in groups {
        let mut g = 0.0;
        for m in group {
            if m.ratio <= 0.0 {
                return Err(AlgoError::NonPositiveRatio(m.ratio));
            }
            g += ppo_clip_term(m.ratio, m.advantage, eps);
        }
        total += g / group.len() as f64;
    }
    let mut objective = total / groups.len() as f64;
    if beta != 0.0 && !kl_estimates.is_empty() {
        objective -= beta * kl_estimates.iter().sum::<f64>() / kl_estimates.len() as f64;
    }
    Ok(objective)
}

/// Keeps groups with at least one success and at least one failure.
pub fn dapo_dynamic_filter<F>(groups: Vec<TrajectoryGroup>, is_success: F) -> Vec<TrajectoryGroup>
where
    F: Fn(&Trajectory) -> bool,
{
    groups
        .into_iter()
        .filter(|g| {
            let wins = g.trajectories.iter().filter(|t| is_success(t)).count();
            wins > 0 && wins < g.trajectories.len()
        })
        .collect()
}

/// Token-level DAPO objective: the clipped terms of every token of every
/// response, summed and divided by the total token count.
///
/// `groups[g][i]` lists the `(ratio, advantage)` of each token of response
/// `i` in group `g`.
pub fn dapo_objective(
    groups: &[Vec<Vec<RatioAdvantage>>],
    eps_low: f64,
    eps_high: f64,
) -> Result<f64, AlgoError> {
    let mut sum = 0.0;
    let mut tokens = 0usize;
    for tok in groups.iter().flatten().flatten() {
        if tok.ratio <= 0.0 {
            return Err(AlgoError::NonPositiveRatio(tok.ratio));
        }
        sum += clip_term(tok.ratio, tok.advantage, eps_low, eps_high);
        tokens += 1;
    }
    if tokens == 0 {
        return Err(AlgoError::ZeroTokens);
    }
    Ok(sum / tokens as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::advantage::grpo_group_advantage;
    use crate::domain::trajectory::fixtures::*;
    use crate::domain::TerminalStatus;
    use proptest::prelude::*;

    #[test]
    fn ppo_examples() {
        assert!((ppo_clip_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((ppo_clip_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
        for a in [-3.0, -0.1, 0.0, 0.7, 2.0] {
            assert_eq!(ppo_clip_term(1.0, a, 0.2), a);
        }
    }

    #[test]
    fn grpo_examples() {
        let ra = RatioAdvantage::new;
        let on_policy = vec![vec![ra(1.0, 1.0), ra(1.0, -1.0)]];
        assert_eq!(grpo_objective(&on_policy, 0.2, 0.0, &[]).unwrap(), 0.0);
        let g = vec![vec![ra(1.5, 1.0), ra(1.0, -1.0)]];
        assert!((grpo_objective(&g, 0.2, 0.0, &[]).unwrap() - 0.1).abs() < 1e-12);
        assert!((grpo_objective(&g, 0.2, 0.1, &[0.5]).unwrap() - 0.05).abs() < 1e-12);
        assert!((grpo_objective(&g, 0.2, 0.1, &[0.25, 0.75]).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(grpo_objective(&[], 0.2, 0.0, &[]), Err(AlgoError::EmptyBatch));
        assert_eq!(grpo_objective(&[vec![]], 0.2, 0.0, &[]), Err(AlgoError::EmptyBatch));
    }

    fn group_with_rewards(rewards: &[f64]) -> TrajectoryGroup {
        let mut g = TrajectoryGroup::new("bisect", 0, 0);
        g.trajectories = rewards
            .iter()
            .map(|r| traj(vec![step(vec![0], vec![2], 0.0)], TerminalStatus::Completed, *r))
            .collect();
        g
    }

    #[test]
    fn dynamic_filter_examples() {
        let success = |t: &Trajectory| t.is_success();
        let kept = dapo_dynamic_filter(
            vec![
                group_with_rewards(&[1.0, 1.0, 1.0, 1.0]),
                group_with_rewards(&[0.0, 0.0, 0.0, 0.0]),
                group_with_rewards(&[1.0, 0.0, 1.0, 0.0]),
            ],
            success,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].returns(), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn dapo_examples() {
        let ra = RatioAdvantage::new;
        let g = vec![vec![vec![ra(1.0, 0.5), ra(1.0, 0.5)], vec![ra(1.0, -1.0)]]];
        assert!((dapo_objective(&g, 0.2, 0.28).unwrap() - 0.0).abs() < 1e-12);
        let g = vec![vec![vec![ra(1.0, 2.0)], vec![ra(1.0, 1.0), ra(1.0, 0.0)]]];
        assert!((dapo_objective(&g, 0.2, 0.28).unwrap() - 1.0).abs() < 1e-12);
        assert!((dapo_objective(&[vec![vec![ra(2.0, 1.0)]]], 0.2, 0.28).unwrap() - 1.28).abs() < 1e-12);
        assert!((dapo_objective(&[vec![vec![ra(0.5, 1.0)]]], 0.2, 0.28).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(dapo_objective(&[vec![vec![]]], 0.2, 0.28), Err(AlgoError::ZeroTokens));
    }

    proptest! {
        #[test]
        fn clip_never_exceeds_unclipped(ratio in 0.01f64..5.0, adv in -5.0f64..5.0, eps in 0.01f64..0.9) {
            let term = ppo_clip_term(ratio, adv, eps);
            prop_assert!(term <= ratio * adv + 1e-15);
            let inside = (1.0 - eps..=1.0 + eps).contains(&ratio);
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
            let equal = (term - ratio * adv).abs() < 1e-15;
            prop_assert_eq!(equal, inside || ratio * adv <= clipped);
        }

        #[test]
        fn dynamic_filter_drops_zero_advantage_groups(
            groups in prop::collection::vec(prop::collection::vec(prop::bool::ANY, 2..8), 1..10)
        ) {
            let groups: Vec<TrajectoryGroup> = groups
                .iter()
                .map(|w| group_with_rewards(&w.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect::<Vec<_>>()))
                .collect();
            for g in dapo_dynamic_filter(groups, |t| t.is_success()) {
                let adv = grpo_group_advantage(&g.returns(), 1e-6).unwrap();
                prop_assert!(adv.iter().any(|a| *a != 0.0));
            }
        }
    }
}
