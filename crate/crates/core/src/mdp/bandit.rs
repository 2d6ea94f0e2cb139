use super::TabularMdp;
use crate::error::Result;
use crate::scalar::Scalar;

/// One decision state with two arms, each paying a deterministic reward and
/// terminating. `q_init` is the Q-table initialisation the learners should
/// start from; placing it close together and far below `q_target` makes the
/// last-updated arm the greedy one on every alternating update.
#[derive(Debug, Clone)]
pub struct TwoArmBandit<S> {
    pub mdp: TabularMdp<S>,
    pub q_init: [S; 2],
    pub q_target: [S; 2],
}

impl<S: Scalar> TwoArmBandit<S> {
    pub const DECISION_STATE: usize = 0;
    pub const TERMINAL_STATE: usize = 1;

    pub fn new(q_init: [S; 2], q_target: [S; 2]) -> Result<Self> {
        let transitions = vec![vec![(1, S::one())], vec![(1, S::one())], vec![(1, S::one())], vec![(1, S::one())]];
        let reward = vec![q_target[0], q_target[1], S::zero(), S::zero()];
        let mdp = TabularMdp::new(
            2,
            2,
            transitions,
            reward,
            S::one(),
            vec![S::one(), S::zero()],
            vec![false, true],
        )?;
        Ok(Self { mdp, q_init, q_target })
    }

    /// The near-tied setup used to show unbounded argmax switching.
    pub fn near_tied() -> Self {
        Self::new([S::zero(), S::lit(0.001)], [S::lit(10.0), S::lit(10.001)]).expect("valid bandit")
    }
}
