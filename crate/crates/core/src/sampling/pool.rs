//! Versioned policy snapshots: one fresh member plus stale members.

use std::sync::Arc;

use super::error::SamplingError;
use crate::algorithms::LinearSoftmaxPolicy;
use crate::domain::PolicyId;

/// True iff stale members should adopt the weights published at
/// `update_step`.
pub fn stale_refresh_due(update_step: u64, stale_interval: u64) -> Result<bool, SamplingError> {
    if stale_interval < 1 {
        return Err(SamplingError::StaleInterval);
    }
    if update_step < 1 {
        return Err(SamplingError::UpdateStepZero);
    }
    Ok(update_step.is_multiple_of(stale_interval))
}

#[derive(Debug, Clone)]
pub struct PolicyPool {
    members: Vec<Arc<LinearSoftmaxPolicy>>,
    fresh: usize,
    stale_interval: u64,
}

impl PolicyPool {
    pub fn single(policy: Arc<LinearSoftmaxPolicy>) -> Self {
        PolicyPool {
            members: vec![policy],
            fresh: 0,
            stale_interval: 1,
        }
    }

    /// Training pool: the fresh policy plus one stale copy of it.
    pub fn fresh_and_stale(policy: Arc<LinearSoftmaxPolicy>, stale_interval: u64) -> Result<Self, SamplingError> {
        Self::new(vec![policy.clone(), policy], 0, stale_interval)
    }

    pub fn new(
        members: Vec<Arc<LinearSoftmaxPolicy>>,
        fresh: usize,
        stale_interval: u64,
    ) -> Result<Self, SamplingError> {
        if members.is_empty() {
            return Err(SamplingError::EmptyPool);
        }
        if fresh >= members.len() {
            return Err(SamplingError::FreshIndex {
                index: fresh,
                len: members.len(),
            });
        }
        if stale_interval < 1 {
            return Err(SamplingError::StaleInterval);
        }
        let head = members[fresh].version();
        if let Some(m) = members.iter().find(|m| m.version() > head) {
            return Err(SamplingError::StaleAhead {
                stale: m.version(),
                fresh: head,
            });
        }
        Ok(PolicyPool {
            members,
            fresh,
            stale_interval,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Arc<LinearSoftmaxPolicy>] {
        &self.members
    }

    pub fn get(&self, i: usize) -> &Arc<LinearSoftmaxPolicy> {
        &self.members[i]
    }

    pub fn fresh(&self) -> &Arc<LinearSoftmaxPolicy> {
        &self.members[self.fresh]
    }

    pub fn fresh_index(&self) -> usize {
        self.fresh
    }

    pub fn stale_interval(&self) -> u64 {
        self.stale_interval
    }

    pub fn ids(&self) -> Vec<PolicyId> {
        self.members.iter().map(|m| m.id()).collect()
    }

    /// Installs the weights of `update_step` as the fresh member, and in the
    /// stale members too when their refresh is due.
    pub fn publish(&mut self, policy: Arc<LinearSoftmaxPolicy>, update_step: u64) -> Result<(), SamplingError> {
        let refresh = stale_refresh_due(update_step, self.stale_interval)?;
        for (i, m) in self.members.iter_mut().enumerate() {
            if i == self.fresh || refresh {
                *m = policy.clone();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::FeatureConfig;

    fn policy(version: u64) -> Arc<LinearSoftmaxPolicy> {
        Arc::new(LinearSoftmaxPolicy::zeros(FeatureConfig::small(2), 4).with_version(version))
    }

    #[test]
    fn refresh_rule() {
        assert_eq!(stale_refresh_due(4, 4), Ok(true));
        assert_eq!(stale_refresh_due(5, 4), Ok(false));
        assert_eq!(stale_refresh_due(8, 4), Ok(true));
        assert_eq!(stale_refresh_due(3, 0), Err(SamplingError::StaleInterval));
    }

    #[test]
    fn stale_member_lags_until_due() {
        let mut pool = PolicyPool::fresh_and_stale(policy(0), 4).unwrap();
        for step in 1..=7 {
            pool.publish(policy(step), step).unwrap();
            let stale = pool.get(1).version();
            assert_eq!(pool.fresh().version(), step);
            assert_eq!(stale, if step >= 4 { 4 } else { 0 });
            assert!(stale <= pool.fresh().version());
        }
    }

    #[test]
    fn invariants_checked() {
        assert_eq!(PolicyPool::new(vec![], 0, 4).unwrap_err(), SamplingError::EmptyPool);
        assert!(PolicyPool::new(vec![policy(1), policy(3)], 0, 4).is_err());
        assert!(PolicyPool::new(vec![policy(1)], 2, 4).is_err());
    }
}
