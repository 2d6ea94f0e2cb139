use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ObservationCodec, StateAnnotation, TabularMdp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Hard-exploration grid: the agent starts top-left, descends one row per
/// step and moves one column left or right. Moving right costs
/// `0.01 / depth`; only choosing right in the bottom-right cell pays 1, so a
/// single trajectory (all right) is rewarded. Episodes last `depth` steps and
/// end in a shared absorbing state.
///
/// `new` uses action 1 for right everywhere. `with_action_map` draws, per
/// cell, which action index moves right, so a network cannot solve the task
/// by preferring one action index in every cell.
#[derive(Debug, Clone)]
pub struct DeepSea<S> {
    pub mdp: TabularMdp<S>,
    pub codec: ObservationCodec<S>,
    pub annotation: StateAnnotation,
    depth: usize,
    right: Vec<usize>,
}

impl<S: Scalar> DeepSea<S> {
    pub const MOVE_COST: f64 = 0.01;

    pub fn new(depth: usize) -> Result<Self> {
        Self::build(depth, vec![RIGHT; depth * depth])
    }

    /// Cell-wise random action mapping drawn from `mapping_seed`.
    pub fn with_action_map(depth: usize, mapping_seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(mapping_seed);
        let right = (0..depth * depth).map(|_| if rng.gen_bool(0.5) { RIGHT } else { LEFT }).collect();
        Self::build(depth, right)
    }

    fn build(depth: usize, right: Vec<usize>) -> Result<Self> {
        if depth < 2 {
            return Err(Error::Construction(format!("deep sea depth must be >= 2, got {depth}")));
        }
        let cells = depth * depth;
        let exit = cells;
        let num_states = cells + 1;
        let cost = S::lit(Self::MOVE_COST) / S::from_count(depth);
        let mut transitions = Vec::with_capacity(num_states * 2);
        let mut reward = Vec::with_capacity(num_states * 2);
        let mut coords = Vec::with_capacity(num_states);
        let mut active = Vec::with_capacity(num_states);
        for row in 0..depth {
            for col in 0..depth {
                let s = row * depth + col;
                coords.push(vec![col as i64, row as i64]);
                active.push(vec![(s, S::one())]);
                for action in [LEFT, RIGHT] {
                    let goes_right = action == right[s];
                    let next_col = if goes_right { (col + 1).min(depth - 1) } else { col.saturating_sub(1) };
                    let next = if row + 1 == depth { exit } else { (row + 1) * depth + next_col };
                    transitions.push(vec![(next, S::one())]);
                    let mut r = S::zero();
                    if goes_right {
                        r -= cost;
                        if col == depth - 1 {
                            r += S::one();
                        }
                    }
                    reward.push(r);
                }
            }
        }
        coords.push(vec![-1, -1]);
        active.push(Vec::new());
        for _ in 0..2 {
            transitions.push(vec![(exit, S::one())]);
            reward.push(S::zero());
        }
        let mut initial = vec![S::zero(); num_states];
        initial[0] = S::one();
        let mut terminal = vec![false; num_states];
        terminal[exit] = true;
        let mdp = TabularMdp::new(num_states, 2, transitions, reward, S::one(), initial, terminal)?;
        let codec = ObservationCodec::new(cells, active)?;
        let annotation = StateAnnotation { axes: vec!["x", "y"], coords };
        Ok(Self { mdp, codec, annotation, depth, right })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Action index that moves right in grid cell `s`.
    pub fn right_action(&self, s: usize) -> usize {
        self.right[s]
    }

    /// Return of the all-right trajectory: the reward minus every move cost.
    pub fn optimal_return(&self) -> S {
        S::one() - S::lit(Self::MOVE_COST)
    }
}
