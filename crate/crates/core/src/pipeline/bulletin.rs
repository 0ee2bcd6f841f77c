//! Versioned weight broadcast read by rollout engines between groups.

use std::sync::{Arc, RwLock};

use crate::algorithms::LinearSoftmaxPolicy;
use crate::sampling::{stale_refresh_due, PolicyPool, SamplingError};

#[derive(Debug, Clone)]
pub struct Published {
    pub version: u64,
    pub snapshot: Arc<LinearSoftmaxPolicy>,
    /// Seconds on the run clock.
    pub published_at: f64,
}

#[derive(Debug)]
struct Board {
    latest: Published,
    stale: Published,
}

/// Holds the newest weights and the snapshot stale engines sample from. The
/// stale snapshot only moves on updates where [`stale_refresh_due`] holds.
#[derive(Debug)]
pub struct WeightsBulletin {
    stale_interval: u64,
    board: RwLock<Board>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BulletinError {
    #[error("version {got} does not advance past {current}")]
    NotIncreasing { current: u64, got: u64 },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

impl WeightsBulletin {
    pub fn new(initial: Arc<LinearSoftmaxPolicy>, stale_interval: u64, at: f64) -> Result<Self, BulletinError> {
        stale_refresh_due(1, stale_interval)?;
        let p = Published {
            version: initial.version(),
            snapshot: initial,
            published_at: at,
        };
        Ok(WeightsBulletin {
            stale_interval,
            board: RwLock::new(Board {
                latest: p.clone(),
                stale: p,
            }),
        })
    }

    pub fn stale_interval(&self) -> u64 {
        self.stale_interval
    }

    pub fn publish(&self, snapshot: Arc<LinearSoftmaxPolicy>, at: f64) -> Result<u64, BulletinError> {
        let mut b = self.board.write().unwrap_or_else(|e| e.into_inner());
        let version = snapshot.version();
        if version <= b.latest.version {
            return Err(BulletinError::NotIncreasing {
                current: b.latest.version,
                got: version,
            });
        }
        let p = Published {
            version,
            snapshot,
            published_at: at,
        };
        if stale_refresh_due(version, self.stale_interval)? {
            b.stale = p.clone();
        }
        b.latest = p;
        Ok(version)
    }

    pub fn latest(&self) -> Published {
        self.board.read().unwrap_or_else(|e| e.into_inner()).latest.clone()
    }

    pub fn stale(&self) -> Published {
        self.board.read().unwrap_or_else(|e| e.into_inner()).stale.clone()
    }

    pub fn version(&self) -> u64 {
        self.board.read().unwrap_or_else(|e| e.into_inner()).latest.version
    }

    /// Pool view for one engine: member 0 tracks the latest weights, member 1
    /// the stale snapshot.
    pub fn pool(&self) -> PolicyPool {
        let b = self.board.read().unwrap_or_else(|e| e.into_inner());
        PolicyPool::new(
            vec![b.latest.snapshot.clone(), b.stale.snapshot.clone()],
            0,
            self.stale_interval,
        )
        .expect("stale snapshot never leads")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::FeatureConfig;

    fn policy(v: u64) -> Arc<LinearSoftmaxPolicy> {
        Arc::new(LinearSoftmaxPolicy::zeros(FeatureConfig::small(2), 3).with_version(v))
    }

    #[test]
    fn stale_snapshot_moves_on_multiples() {
        let b = WeightsBulletin::new(policy(0), 4, 0.0).unwrap();
        for v in 1..=9 {
            b.publish(policy(v), v as f64).unwrap();
            assert_eq!(b.version(), v);
            assert_eq!(b.stale().version, v / 4 * 4);
            let pool = b.pool();
            assert_eq!(pool.fresh().version(), v);
        }
        assert!(matches!(b.publish(policy(9), 10.0), Err(BulletinError::NotIncreasing { .. })));
    }
}
