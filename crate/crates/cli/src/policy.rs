//! Policy snapshot files.

use std::path::Path;

use agentrl_core::algorithms::{FeatureConfig, LinearSoftmaxPolicy};
use agentrl_core::domain::Vocabulary;
use agentrl_core::sampling::reference;
use clap::ValueEnum;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    /// All-zero weights: uniform over every legal token.
    Zero,
    BisectOptimal,
    /// KVStore player that repairs slots 0 and 1 only.
    KvSpecialistA,
    /// KVStore player that repairs slots 2 and 3 only.
    KvSpecialistB,
}

pub fn make(kind: PolicyKind) -> LinearSoftmaxPolicy {
    match kind {
        PolicyKind::Zero => LinearSoftmaxPolicy::zeros(FeatureConfig::default(), Vocabulary::standard().len()),
        PolicyKind::BisectOptimal => reference::bisect_optimal(),
        PolicyKind::KvSpecialistA => (*reference::kv_specialist_pair().0).clone(),
        PolicyKind::KvSpecialistB => (*reference::kv_specialist_pair().1).clone(),
    }
}

pub fn load(path: &Path) -> Result<LinearSoftmaxPolicy, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let p = LinearSoftmaxPolicy::from_json(&text)
        .map_err(|e| CliError::Config(format!("{}: bad policy snapshot: {e}", path.display())))?;
    if p.vocab_size() != Vocabulary::standard().len() {
        return Err(CliError::Config(format!(
            "{}: snapshot vocabulary has {} tokens, expected {}",
            path.display(),
            p.vocab_size(),
            Vocabulary::standard().len()
        )));
    }
    Ok(p)
}

pub fn save(policy: &LinearSoftmaxPolicy, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, policy.to_json()).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}
