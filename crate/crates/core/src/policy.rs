//! Q-tables, stochastic policies and the greedy operator.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense `[state][action]` table of action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<S> {
    num_states: usize,
    num_actions: usize,
    values: Vec<S>,
}

impl<S: Scalar> QTable<S> {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self { num_states, num_actions, values: vec![S::zero(); num_states * num_actions] }
    }

    pub fn from_values(num_states: usize, num_actions: usize, values: Vec<S>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::Shape(format!(
                "{} values for a {num_states}x{num_actions} table",
                values.len()
            )));
        }
        Ok(Self { num_states, num_actions, values })
    }

    pub fn from_fn(num_states: usize, num_actions: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut values = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                values.push(f(s, a));
            }
        }
        Self { num_states, num_actions, values }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> S {
        self.values[s * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: S) {
        self.values[s * self.num_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[S] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [S] {
        &mut self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// `max_a q(s, a)`.
    pub fn state_value(&self, s: usize) -> S {
        self.row(s).iter().copied().fold(S::neg_infinity(), S::max)
    }

    pub fn sup_distance(&self, other: &Self) -> S {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite { state: i / self.num_actions, action: i % self.num_actions }),
            None => Ok(()),
        }
    }
}

/// Per-state action distribution `pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<S> {
    num_states: usize,
    num_actions: usize,
    probs: Vec<S>,
}

impl<S: Scalar> Policy<S> {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = S::one() / S::from_count(num_actions);
        Self { num_states, num_actions, probs: vec![p; num_states * num_actions] }
    }

    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![S::zero(); actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = S::one();
        }
        Self { num_states: actions.len(), num_actions, probs }
    }

    pub fn from_probabilities(num_states: usize, num_actions: usize, probs: Vec<S>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::Shape("policy probability table".into()));
        }
        for s in 0..num_states {
            let row = &probs[s * num_actions..(s + 1) * num_actions];
            let total: S = row.iter().copied().sum();
            if row.iter().any(|&p| p.is_nan() || p < S::zero()) || (total - S::one()).abs() > S::lit(1e-9) {
                return Err(Error::InvalidModel(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(Self { num_states, num_actions, probs })
    }

    /// Epsilon-greedy mixture over a base policy.
    pub fn epsilon_greedy(base: &Self, epsilon: S) -> Self {
        let spread = epsilon / S::from_count(base.num_actions);
        let probs = base.probs.iter().map(|&p| (S::one() - epsilon) * p + spread).collect();
        Self { num_states: base.num_states, num_actions: base.num_actions, probs }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[S] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> S {
        self.probs[s * self.num_actions + a]
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == S::zero() || p == S::one())
    }

    /// Lowest-index most probable action in every state.
    pub fn modal_actions(&self) -> Vec<usize> {
        (0..self.num_states).map(|s| argmax_first(self.row(s))).collect()
    }
}

/// How the greedy operator distributes mass over exactly tied maximisers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieMode {
    /// Tied maximisers share the probability mass equally.
    Share,
    /// The lowest-index maximiser gets all the mass.
    FirstIndex,
}

/// Index of the first maximal entry.
#[inline]
pub fn argmax_first<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy operator with exact tie detection.
pub fn greedy<S: Scalar>(q: &QTable<S>, tie_mode: TieMode) -> Result<Policy<S>> {
    greedy_with_tolerance(q, tie_mode, S::zero())
}

/// Greedy operator treating actions within `tolerance` of the row maximum as
/// tied. Used for values that come out of a linear solve, where exact ties of
/// the underlying quantities show up with rounding noise.
pub fn greedy_with_tolerance<S: Scalar>(q: &QTable<S>, tie_mode: TieMode, tolerance: S) -> Result<Policy<S>> {
    q.check_finite()?;
    let (n, m) = (q.num_states(), q.num_actions());
    let mut probs = vec![S::zero(); n * m];
    for s in 0..n {
        let row = q.row(s);
        let out = &mut probs[s * m..(s + 1) * m];
        match tie_mode {
            TieMode::FirstIndex => out[argmax_first(row)] = S::one(),
            TieMode::Share => {
                let best = row.iter().copied().fold(S::neg_infinity(), S::max);
                let tied = row.iter().filter(|&&v| best - v <= tolerance).count();
                let share = S::one() / S::from_count(tied);
                for (o, &v) in out.iter_mut().zip(row) {
                    if best - v <= tolerance {
                        *o = share;
                    }
                }
            }
        }
    }
    Ok(Policy { num_states: n, num_actions: m, probs })
}

/// First-index greedy actions, one per state.
pub fn greedy_actions<S: Scalar>(q: &QTable<S>) -> Vec<usize> {
    (0..q.num_states()).map(|s| argmax_first(q.row(s))).collect()
}
