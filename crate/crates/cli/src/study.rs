//! `rollout-study`: pass@k per sampling strategy for two snapshots.

use std::sync::Arc;

use agentrl_core::algorithms::LinearSoftmaxPolicy;
use agentrl_core::envs::TaskRegistry;
use agentrl_core::pipeline::RunConfig;
use agentrl_core::sampling::{collect_counts, StudyRow, StudySetup};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub task: String,
    pub ks: Vec<usize>,
    /// Attempts per sample and strategy; mix gets `n` per member.
    pub n: usize,
    pub samples: Vec<u64>,
    pub temperature: f64,
    pub seed: u64,
}

pub fn cmd_rollout_study(
    a: LinearSoftmaxPolicy,
    b: LinearSoftmaxPolicy,
    opts: &StudyOptions,
) -> Result<Vec<StudyRow>, CliError> {
    if opts.ks.is_empty() || opts.ks.contains(&0) {
        return Err(CliError::Config("k values must be positive".into()));
    }
    if let Some(k) = opts.ks.iter().find(|&&k| k > opts.n) {
        return Err(CliError::Config(format!("k={k} exceeds n={}", opts.n)));
    }
    if opts.samples.is_empty() {
        return Err(CliError::Config("no samples".into()));
    }
    let registry = TaskRegistry::standard();
    let spec = registry
        .spec(&opts.task)
        .ok_or_else(|| CliError::Config(format!("unknown task {:?}", opts.task)))?;
    let gateway = crate::train::local_gateway(&RunConfig::default());
    let setup = StudySetup {
        spec,
        samples: opts.samples.clone(),
        env_seed: opts.seed,
        n: opts.n,
        temperature: opts.temperature,
        rng_seed: opts.seed,
    };
    let counts = collect_counts(&Arc::new(a), &Arc::new(b), gateway.as_ref(), &setup)
        .map_err(|e| CliError::Config(e.to_string()))?;
    counts.rows(&opts.ks).map_err(|e| CliError::Config(e.to_string()))
}

pub fn to_csv(rows: &[StudyRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Failed(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
