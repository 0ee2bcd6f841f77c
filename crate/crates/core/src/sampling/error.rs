use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SamplingError {
    #[error("policy pool is empty")]
    EmptyPool,
    #[error("mix rollouts need a pool of exactly 2 members, got {0}")]
    PoolSize(usize),
    #[error("mix rollouts need an even count, got {0}")]
    OddCount(usize),
    #[error("k = {k} exceeds n = {n}")]
    KGreaterThanN { k: usize, n: usize },
    #[error("k must be at least 1")]
    KZero,
    #[error("success count {c} outside 0..={n}")]
    CountOutOfRange { c: usize, n: usize },
    #[error("dataset {0} is empty")]
    EmptyDataset(usize),
    #[error("no datasets")]
    NoDatasets,
    #[error("stale interval must be at least 1")]
    StaleInterval,
    #[error("update steps start at 1")]
    UpdateStepZero,
    #[error("fresh index {index} out of range for {len} members")]
    FreshIndex { index: usize, len: usize },
    #[error("stale member version {stale} is newer than the fresh version {fresh}")]
    StaleAhead { stale: u64, fresh: u64 },
}
