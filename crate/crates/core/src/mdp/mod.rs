//! Exact tabular MDPs and the toy domains built on them.

mod bandit;
mod catch;
mod chain;
mod deep_sea;
mod four_rooms;
mod random;

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use bandit::TwoArmBandit;
pub use catch::Catch;
pub use chain::{ChainMdp, BLUE, GREEN, RED};
pub use deep_sea::DeepSea;
pub use four_rooms::FourRooms;
pub use random::random_mdp;

pub mod catch_actions {
    pub use super::catch::{LEFT, RIGHT, STAY};
}

pub mod four_rooms_actions {
    pub use super::four_rooms::{DOWN, LEFT, RIGHT, UP};
}

pub mod deep_sea_actions {
    pub use super::deep_sea::{LEFT, RIGHT};
}

/// Sparse successor distribution of one `(state, action)` pair.
pub type Successors<S> = Vec<(usize, S)>;

/// Explicit finite MDP with expected rewards `r(s, a)` and kernel `p(s' | s, a)`.
///
/// Rows are stored sparsely, sorted by next-state index with zero entries
/// removed. Every constructor goes through [`TabularMdp::new`], so a value of
/// this type always satisfies the model invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp<S> {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<Successors<S>>,
    reward: Vec<S>,
    discount: S,
    initial: Vec<S>,
    terminal: Vec<bool>,
}

impl<S: Scalar> TabularMdp<S> {
    /// Validates and assembles a model. `transitions` and `reward` are indexed
    /// `state * num_actions + action`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Successors<S>>,
        reward: Vec<S>,
        discount: S,
        initial: Vec<S>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel("need at least one state and one action".into()));
        }
        let pairs = num_states * num_actions;
        if transitions.len() != pairs || reward.len() != pairs {
            return Err(Error::Shape(format!(
                "expected {pairs} transition rows and rewards, got {} and {}",
                transitions.len(),
                reward.len()
            )));
        }
        if initial.len() != num_states || terminal.len() != num_states {
            return Err(Error::Shape("initial distribution / terminal mask length".into()));
        }
        if !(discount >= S::zero() && discount <= S::one()) {
            return Err(Error::InvalidModel(format!("discount {discount} outside [0, 1]")));
        }
        let tol = row_tolerance::<S>();
        let mut rows = Vec::with_capacity(pairs);
        for (idx, mut row) in transitions.into_iter().enumerate() {
            let (s, a) = (idx / num_actions, idx % num_actions);
            row.sort_by_key(|&(next, _)| next);
            let mut merged: Successors<S> = Vec::with_capacity(row.len());
            for (next, p) in row {
                if next >= num_states {
                    return Err(Error::InvalidModel(format!("successor {next} out of range at ({s}, {a})")));
                }
                if !p.is_finite() || p < S::zero() || p > S::one() {
                    return Err(Error::InvalidModel(format!("probability {p} at ({s}, {a})")));
                }
                match merged.last_mut() {
                    Some(last) if last.0 == next => last.1 += p,
                    _ => merged.push((next, p)),
                }
            }
            merged.retain(|&(_, p)| p > S::zero());
            let total: S = merged.iter().map(|&(_, p)| p).sum();
            if (total - S::one()).abs() > tol {
                return Err(Error::InvalidModel(format!("row ({s}, {a}) sums to {total}")));
            }
            if !reward[idx].is_finite() {
                return Err(Error::NonFinite { state: s, action: a });
            }
            rows.push(merged);
        }
        let init_total: S = initial.iter().copied().sum();
        if initial.iter().any(|&p| !p.is_finite() || p < S::zero()) || (init_total - S::one()).abs() > tol {
            return Err(Error::InvalidModel(format!("initial distribution sums to {init_total}")));
        }
        for s in (0..num_states).filter(|&s| terminal[s]) {
            for a in 0..num_actions {
                let idx = s * num_actions + a;
                let self_loop = rows[idx].len() == 1 && rows[idx][0].0 == s;
                if !self_loop || reward[idx] != S::zero() {
                    return Err(Error::InvalidModel(format!("terminal state {s} must self-loop with reward 0")));
                }
            }
        }
        let mdp = Self { num_states, num_actions, transitions: rows, reward, discount, initial, terminal };
        if mdp.discount >= S::one() && !mdp.is_episodic_dag() {
            return Err(Error::InvalidModel("undiscounted model has a cycle through non-terminal states".into()));
        }
        Ok(mdp)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> S {
        self.discount
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> S {
        self.reward[s * self.num_actions + a]
    }

    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, S)] {
        &self.transitions[s * self.num_actions + a]
    }

    pub fn probability(&self, s: usize, a: usize, next: usize) -> S {
        self.successors(s, a)
            .iter()
            .find(|&&(n, _)| n == next)
            .map_or(S::zero(), |&(_, p)| p)
    }

    pub fn initial_distribution(&self) -> &[S] {
        &self.initial
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    /// States with positive initial probability, ascending.
    pub fn start_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| self.initial[s] > S::zero()).collect()
    }

    /// True when no cycle passes through a non-terminal state, so every
    /// trajectory terminates within `num_states` steps.
    pub fn is_episodic_dag(&self) -> bool {
        let n = self.num_states;
        let mut indegree = vec![0usize; n];
        for s in (0..n).filter(|&s| !self.terminal[s]) {
            for next in self.children(s) {
                if !self.terminal[next] {
                    indegree[next] += 1;
                }
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&s| !self.terminal[s] && indegree[s] == 0).collect();
        let mut seen = 0;
        while let Some(s) = queue.pop_front() {
            seen += 1;
            for next in self.children(s) {
                if !self.terminal[next] {
                    indegree[next] -= 1;
                    if indegree[next] == 0 {
                        queue.push_back(next);
                    }
                }
            }
        }
        seen == self.terminal.iter().filter(|&&t| !t).count()
    }

    /// Distinct successors of `s` under any action.
    fn children(&self, s: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.num_actions)
            .flat_map(|a| self.successors(s, a).iter().map(|&(n, _)| n))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// All states reachable with positive probability from the initial
    /// distribution under some policy, in ascending index order.
    pub fn reachable_states(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_states];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for s in self.start_states() {
            seen[s] = true;
            queue.push_back(s);
        }
        while let Some(s) = queue.pop_front() {
            for a in 0..self.num_actions {
                for &(next, _) in self.successors(s, a) {
                    if !seen[next] {
                        seen[next] = true;
                        queue.push_back(next);
                    }
                }
            }
        }
        (0..self.num_states).filter(|&s| seen[s]).collect()
    }

    /// Reachable states that are not terminal.
    pub fn reachable_decision_states(&self) -> Vec<usize> {
        self.reachable_states().into_iter().filter(|&s| !self.terminal[s]).collect()
    }

    /// Draws a successor. Deterministic rows consume no randomness.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let row = self.successors(s, a);
        if row.len() == 1 {
            return row[0].0;
        }
        let u = S::lit(rng.gen::<f64>());
        let mut acc = S::zero();
        for &(next, p) in row {
            acc += p;
            if u < acc {
                return next;
            }
        }
        row[row.len() - 1].0
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let starts = self.start_states();
        if starts.len() == 1 {
            return starts[0];
        }
        let u = S::lit(rng.gen::<f64>());
        let mut acc = S::zero();
        for &s in &starts {
            acc += self.initial[s];
            if u < acc {
                return s;
            }
        }
        starts[starts.len() - 1]
    }

    /// Plain-text matrix dump: one line per `(s, a)` in state-major order,
    /// holding the dense next-state probabilities followed by the reward.
    pub fn write_matrix_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut dense = vec![S::zero(); self.num_states];
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                dense.iter_mut().for_each(|p| *p = S::zero());
                for &(next, p) in self.successors(s, a) {
                    dense[next] = p;
                }
                let mut line = String::new();
                for p in &dense {
                    line.push_str(&format!("{p} "));
                }
                line.push_str(&format!("{}", self.reward(s, a)));
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

fn row_tolerance<S: Scalar>() -> S {
    S::lit(1e-12).max(S::epsilon() * S::lit(64.0))
}

/// Maps state indices to real feature vectors for function approximation.
///
/// Features are stored sparsely because every built-in encoding is one- or
/// two-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationCodec<S> {
    feature_dimension: usize,
    active: Vec<Vec<(usize, S)>>,
}

impl<S: Scalar> ObservationCodec<S> {
    pub fn new(feature_dimension: usize, active: Vec<Vec<(usize, S)>>) -> Result<Self> {
        if feature_dimension == 0 {
            return Err(Error::Construction("feature dimension must be positive".into()));
        }
        for (s, feats) in active.iter().enumerate() {
            for &(i, v) in feats {
                if i >= feature_dimension || !v.is_finite() {
                    return Err(Error::Construction(format!("bad feature {i} for state {s}")));
                }
            }
        }
        Ok(Self { feature_dimension, active })
    }

    pub fn feature_dimension(&self) -> usize {
        self.feature_dimension
    }

    pub fn num_states(&self) -> usize {
        self.active.len()
    }

    /// Non-zero `(feature, value)` pairs of a state.
    pub fn active(&self, state: usize) -> &[(usize, S)] {
        &self.active[state]
    }

    pub fn encode_into(&self, state: usize, out: &mut [S]) {
        out.iter_mut().for_each(|x| *x = S::zero());
        for &(i, v) in &self.active[state] {
            out[i] = v;
        }
    }

    pub fn encode(&self, state: usize) -> Vec<S> {
        let mut out = vec![S::zero(); self.feature_dimension];
        self.encode_into(state, &mut out);
        out
    }

    /// Whether distinct states among `states` always get distinct features.
    pub fn is_injective_on(&self, states: &[usize]) -> bool {
        let mut encoded: Vec<Vec<u64>> = states
            .iter()
            .map(|&s| {
                let mut v: Vec<u64> = self.active[s]
                    .iter()
                    .filter(|(_, x)| *x != S::zero())
                    .flat_map(|&(i, x)| [i as u64, x.as_f64().to_bits()])
                    .collect();
                v.shrink_to_fit();
                v
            })
            .collect();
        encoded.sort();
        encoded.windows(2).all(|w| w[0] != w[1])
    }
}

/// Per-state descriptive coordinates, e.g. `(ball_x, ball_y, paddle_x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateAnnotation {
    pub axes: Vec<&'static str>,
    /// One coordinate tuple per state, in `axes` order. Absorbing helper
    /// states that have no position carry `-1` everywhere.
    pub coords: Vec<Vec<i64>>,
}

impl StateAnnotation {
    pub fn coordinate(&self, state: usize, axis: &str) -> Option<i64> {
        let i = self.axes.iter().position(|&a| a == axis)?;
        self.coords.get(state).map(|c| c[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(discount: f64) -> Result<TabularMdp<f64>> {
        TabularMdp::new(
            2,
            1,
            vec![vec![(1, 1.0)], vec![(1, 1.0)]],
            vec![1.0, 0.0],
            discount,
            vec![1.0, 0.0],
            vec![false, true],
        )
    }

    #[test]
    fn accepts_valid_episodic_model() {
        let mdp = two_state(1.0).unwrap();
        assert!(mdp.is_episodic_dag());
        assert_eq!(mdp.reachable_states(), vec![0, 1]);
    }

    #[test]
    fn rejects_row_not_summing_to_one() {
        let err = TabularMdp::new(1, 1, vec![vec![(0, 0.5)]], vec![0.0], 0.9, vec![1.0], vec![false]);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn rejects_undiscounted_cycle() {
        let err = TabularMdp::new(1, 1, vec![vec![(0, 1.0)]], vec![0.0], 1.0, vec![1.0], vec![false]);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
        assert!(TabularMdp::new(1, 1, vec![vec![(0, 1.0)]], vec![0.0], 0.5, vec![1.0], vec![false]).is_ok());
    }

    #[test]
    fn rejects_terminal_with_reward() {
        let err = TabularMdp::new(
            2,
            1,
            vec![vec![(1, 1.0)], vec![(1, 1.0)]],
            vec![0.0, 1.0],
            0.9,
            vec![1.0, 0.0],
            vec![false, true],
        );
        assert!(err.is_err());
    }

    #[test]
    fn duplicate_successors_are_merged() {
        let mdp = TabularMdp::new(
            2,
            1,
            vec![vec![(1, 0.25), (1, 0.75)], vec![(1, 1.0)]],
            vec![0.0, 0.0],
            0.9,
            vec![1.0, 0.0],
            vec![false, true],
        )
        .unwrap();
        assert_eq!(mdp.successors(0, 0), &[(1, 1.0)]);
        assert_eq!(mdp.probability(0, 0, 0), 0.0);
    }

    #[test]
    fn matrix_dump_has_one_line_per_pair() {
        let mdp = two_state(0.5).unwrap();
        let mut buf = Vec::new();
        mdp.write_matrix_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, vec!["0 1 1", "0 1 0"]);
    }
}
