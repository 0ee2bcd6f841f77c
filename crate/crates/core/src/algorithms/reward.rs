use super::error::AlgoError;
use crate::domain::TerminalStatus;

/// Fixed reward for an abnormal episode ending.
pub const ABNORMAL_PENALTY: f64 = -0.2;

/// Maps an episode outcome onto the unified reward scale: the intrinsic
/// reward when the environment defines one, else 1/0 for correct/incorrect,
/// and [`ABNORMAL_PENALTY`] for abnormal terminations. The effective range is
/// therefore `[-0.2, 1]`.
pub fn unified_reward(
    status: TerminalStatus,
    env_reward: Option<f64>,
    correct: Option<bool>,
) -> Result<f64, AlgoError> {
    if status.is_abnormal() {
        return Ok(ABNORMAL_PENALTY);
    }
    if status != TerminalStatus::Completed {
        return Err(AlgoError::NotScorable(status));
    }
    match (env_reward, correct) {
        (Some(r), _) if !(0.0..=1.0).contains(&r) => Err(AlgoError::RewardOutOfRange(r)),
        (Some(r), _) => Ok(r),
        (None, Some(true)) => Ok(1.0),
        (None, Some(false)) => Ok(0.0),
        (None, None) => Err(AlgoError::MissingOutcome),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_outcomes() {
        assert_eq!(unified_reward(TerminalStatus::Completed, None, Some(true)), Ok(1.0));
        assert_eq!(unified_reward(TerminalStatus::Completed, None, Some(false)), Ok(0.0));
        assert_eq!(unified_reward(TerminalStatus::TaskLimitReached, None, None), Ok(-0.2));
        assert_eq!(unified_reward(TerminalStatus::LengthLimit, Some(0.5), None), Ok(-0.2));
        assert_eq!(unified_reward(TerminalStatus::ProtocolError, None, None), Ok(-0.2));
        assert_eq!(unified_reward(TerminalStatus::Completed, Some(0.73), None), Ok(0.73));
    }

    #[test]
    fn errors() {
        assert_eq!(
            unified_reward(TerminalStatus::Completed, Some(1.5), None),
            Err(AlgoError::RewardOutOfRange(1.5))
        );
        assert!(unified_reward(TerminalStatus::Completed, Some(-0.1), None).is_err());
        assert_eq!(
            unified_reward(TerminalStatus::EnvError, None, Some(true)),
            Err(AlgoError::NotScorable(TerminalStatus::EnvError))
        );
        assert_eq!(
            unified_reward(TerminalStatus::Completed, None, None),
            Err(AlgoError::MissingOutcome)
        );
    }
}
