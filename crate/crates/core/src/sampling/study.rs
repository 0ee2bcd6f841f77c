//! pass@k comparison of single, mix and cross-policy sampling for two
//! policies on one task.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::error::SamplingError;
use super::passk::pass_at_k;
use super::pool::PolicyPool;
use super::rollout::{cross_policy_rollout, mix_rollout, single_rollout, Episode};
use crate::algorithms::LinearSoftmaxPolicy;
use crate::domain::TaskSpec;
use crate::envs::Gateway;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub strategy: String,
    pub k: usize,
    pub pass_at_k: f64,
    pub n_samples: usize,
    pub attempts_per_sample: usize,
}

/// Per-sample success counts for each strategy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyCounts {
    pub n: usize,
    pub single_a: Vec<usize>,
    pub single_b: Vec<usize>,
    pub cross: Vec<usize>,
    /// `(from A, from B)`, `n` attempts each.
    pub mix: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct StudySetup<'a> {
    pub spec: &'a TaskSpec,
    pub samples: Vec<u64>,
    pub env_seed: u64,
    /// Attempts per sample for single and cross; mix gets `n` per member.
    pub n: usize,
    pub temperature: f64,
    pub rng_seed: u64,
}

/// Plays every strategy on every sample.
pub fn collect_counts(
    a: &Arc<LinearSoftmaxPolicy>,
    b: &Arc<LinearSoftmaxPolicy>,
    gateway: &dyn Gateway,
    setup: &StudySetup<'_>,
) -> Result<StudyCounts, SamplingError> {
    let pool = PolicyPool::new(vec![a.clone(), b.clone()], 0, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.rng_seed);
    let mut out = StudyCounts {
        n: setup.n,
        ..StudyCounts::default()
    };
    for &s in &setup.samples {
        let ep = Episode::new(setup.spec, s, setup.env_seed, setup.temperature);
        let wins = |p: &Arc<LinearSoftmaxPolicy>, rng: &mut ChaCha8Rng| {
            (0..setup.n).filter(|_| single_rollout(p, gateway, &ep, rng).is_success()).count()
        };
        out.single_a.push(wins(a, &mut rng));
        out.single_b.push(wins(b, &mut rng));
        out.cross.push(
            (0..setup.n)
                .filter(|_| cross_policy_rollout(&pool, gateway, &ep, &mut rng).is_success())
                .count(),
        );
        let mixed = mix_rollout(&pool, gateway, &ep, 2 * setup.n, &mut rng)?;
        let from = |parity: usize| {
            mixed
                .iter()
                .enumerate()
                .filter(|(i, t)| i % 2 == parity && t.is_success())
                .count()
        };
        out.mix.push((from(0), from(1)));
    }
    Ok(out)
}

fn mean_over(counts: &[usize], n: usize, k: usize) -> Result<f64, SamplingError> {
    let mut total = 0.0;
    for &c in counts {
        total += pass_at_k(n, c, k)?;
    }
    Ok(total / counts.len().max(1) as f64)
}

impl StudyCounts {
    pub fn single_a_at(&self, k: usize) -> Result<f64, SamplingError> {
        mean_over(&self.single_a, self.n, k)
    }

    pub fn single_b_at(&self, k: usize) -> Result<f64, SamplingError> {
        mean_over(&self.single_b, self.n, k)
    }

    pub fn cross_at(&self, k: usize) -> Result<f64, SamplingError> {
        mean_over(&self.cross, self.n, k)
    }

    /// Success probability of `k` draws from each member's attempts, a total
    /// budget of `2k`: `1 - (1 - pass_A@k)(1 - pass_B@k)` per sample.
    pub fn mix_at(&self, k: usize) -> Result<f64, SamplingError> {
        let mut total = 0.0;
        for &(ca, cb) in &self.mix {
            let pa = pass_at_k(self.n, ca, k)?;
            let pb = pass_at_k(self.n, cb, k)?;
            total += 1.0 - (1.0 - pa) * (1.0 - pb);
        }
        Ok(total / self.mix.len().max(1) as f64)
    }

    /// Report rows over `ks`. Mix rows use budget `2k` and are labelled
    /// with that budget.
    pub fn rows(&self, ks: &[usize]) -> Result<Vec<StudyRow>, SamplingError> {
        let samples = self.single_a.len();
        let mut rows = Vec::new();
        for &k in ks {
            let row = |strategy: &str, k: usize, p: f64, attempts: usize| StudyRow {
                strategy: strategy.to_string(),
                k,
                pass_at_k: p,
                n_samples: samples,
                attempts_per_sample: attempts,
            };
            rows.push(row("single-A", k, self.single_a_at(k)?, self.n));
            rows.push(row("single-B", k, self.single_b_at(k)?, self.n));
            rows.push(row("mix", 2 * k, self.mix_at(k)?, 2 * self.n));
            rows.push(row("cross", k, self.cross_at(k)?, self.n));
        }
        Ok(rows)
    }
}
