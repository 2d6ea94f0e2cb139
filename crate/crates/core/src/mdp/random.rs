use rand::Rng;

use super::TabularMdp;
use crate::error::Result;
use crate::scalar::Scalar;

/// Dense random model for property tests: every `(s, a)` row is a random
/// distribution over all states, rewards uniform in `[-1, 1]`, uniform
/// initial distribution, no terminal states. Requires `discount < 1`.
pub fn random_mdp<S: Scalar, R: Rng + ?Sized>(
    num_states: usize,
    num_actions: usize,
    discount: S,
    rng: &mut R,
) -> Result<TabularMdp<S>> {
    let mut transitions = Vec::with_capacity(num_states * num_actions);
    let mut reward = Vec::with_capacity(num_states * num_actions);
    for _ in 0..num_states * num_actions {
        let weights: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        let mut row: Vec<(usize, S)> = weights.iter().enumerate().map(|(i, w)| (i, S::lit(w / total))).collect();
        // Push rounding error onto the last entry so rows sum to one.
        let head: S = row[..num_states - 1].iter().map(|&(_, p)| p).sum();
        row[num_states - 1].1 = S::one() - head;
        transitions.push(row);
        reward.push(S::lit(rng.gen_range(-1.0..=1.0)));
    }
    let initial = vec![S::one() / S::from_count(num_states); num_states];
    let initial = {
        let mut init = initial;
        let head: S = init[..num_states - 1].iter().copied().sum();
        init[num_states - 1] = S::one() - head;
        init
    };
    TabularMdp::new(num_states, num_actions, transitions, reward, discount, initial, vec![false; num_states])
}
