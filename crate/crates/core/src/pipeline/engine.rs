//! Group generation shared by every runtime.

use std::sync::atomic::AtomicBool;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use super::trainer::QueuedGroup;
use crate::domain::{TaskSpec, TerminalStatus, TrajectoryGroup};
use crate::envs::Gateway;
use crate::sampling::{rollout_with, Episode, PolicyPool, StrategyKind};

/// One unit of engine work: the `seq`-th group of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupJob {
    pub seq: u64,
    pub task_index: usize,
    pub sample_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupOutcome {
    Ready(QueuedGroup),
    /// At least one episode hit an environment fault; the group is dropped.
    Dropped { env_errors: usize },
    /// Shutdown arrived mid-group; open sessions were cancelled.
    Interrupted,
}

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Rollout RNG for group `seq`; independent of which engine runs it.
pub fn group_rng(run_seed: u64, seq: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(mix64(run_seed) ^ seq))
}

/// Simulated wall time of group `seq`: the slowest of `group_size`
/// lognormal episode durations. Both scheduling modes draw the same values.
pub fn group_duration(run_seed: u64, seq: u64, group_size: usize, median_s: f64, sigma: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(mix64(run_seed ^ 0x5eed_d0d0) ^ seq));
    let dist = LogNormal::new(median_s.ln(), sigma).expect("validated duration model");
    (0..group_size).map(|_| dist.sample(&mut rng)).fold(0.0, f64::max)
}

/// Plays `group_size` episodes of one sample under `strategy`. The group is
/// tagged with the fresh member's version.
#[allow(clippy::too_many_arguments)]
pub fn generate_group(
    gateway: &dyn Gateway,
    spec: &TaskSpec,
    job: GroupJob,
    pool: &PolicyPool,
    strategy: StrategyKind,
    group_size: usize,
    temperature: f64,
    run_seed: u64,
    stop: Option<&AtomicBool>,
) -> GroupOutcome {
    let version = pool.fresh().version();
    let mut rng = group_rng(run_seed, job.seq);
    let ep = Episode::new(spec, job.sample_id, run_seed, temperature);
    let mut group = TrajectoryGroup::new(&spec.task_id, job.sample_id, version);
    for i in 0..group_size {
        match rollout_with(strategy, pool, gateway, &ep, i, &mut rng, stop) {
            Ok(t) => group.trajectories.push(t),
            Err(_) => return GroupOutcome::Interrupted,
        }
    }
    let env_errors = group
        .trajectories
        .iter()
        .filter(|t| t.terminal_status == TerminalStatus::EnvError)
        .count();
    if env_errors > 0 {
        return GroupOutcome::Dropped { env_errors };
    }
    GroupOutcome::Ready(QueuedGroup { group, version })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{FeatureConfig, LinearSoftmaxPolicy};
    use crate::domain::Vocabulary;
    use crate::envs::{local_controller, ControllerConfig, SystemClock, TaskRegistry};
    use std::sync::atomic::Ordering;
    use std::sync::Arc;

    #[test]
    fn groups_have_fixed_size_and_replay() {
        let c = local_controller(ControllerConfig::default(), Arc::new(SystemClock::new()), 1);
        let reg = TaskRegistry::standard();
        let spec = reg.spec("gridtext").unwrap();
        let p = Arc::new(LinearSoftmaxPolicy::zeros(FeatureConfig::default(), Vocabulary::standard().len()));
        let pool = PolicyPool::fresh_and_stale(p, 4).unwrap();
        let job = GroupJob {
            seq: 5,
            task_index: 0,
            sample_id: 3,
        };
        let run = || generate_group(c.as_ref(), spec, job, &pool, StrategyKind::Cross, 8, 0.8, 1, None);
        let actions = |o: GroupOutcome| match o {
            GroupOutcome::Ready(q) => q
                .group
                .trajectories
                .iter()
                .map(|t| t.steps.iter().map(|s| s.action.tokens.clone()).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            other => panic!("{other:?}"),
        };
        let a = actions(run());
        assert_eq!(a.len(), 8);
        assert_eq!(a, actions(run()));
        let stop = AtomicBool::new(true);
        stop.store(true, Ordering::SeqCst);
        let r = generate_group(c.as_ref(), spec, job, &pool, StrategyKind::Cross, 8, 0.8, 1, Some(&stop));
        assert_eq!(r, GroupOutcome::Interrupted);
        assert_eq!(c.live_total(), 0);
    }

    #[test]
    fn durations_are_keyed_by_sequence() {
        let a = group_duration(3, 10, 8, 1.0, 1.0);
        assert_eq!(a, group_duration(3, 10, 8, 1.0, 1.0));
        assert_ne!(a, group_duration(3, 11, 8, 1.0, 1.0));
        assert!((group_duration(3, 10, 8, 2.0, 0.0) - 2.0).abs() < 1e-12);
    }
}
