//! Policy-change measurements: per-state total variation, weighted
//! aggregates, cumulative and post-convergence change, action gaps, argmax
//! switch statistics and null-space diameters.

use crate::dp;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::{Policy, QTable};
use crate::scalar::Scalar;

/// Where a [`StateWeighting`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingKind {
    UniformOverReachable,
    Explicit,
    EmpiricalVisits,
}

/// Distribution `mu` over states used to average per-state change.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWeighting<S> {
    kind: WeightingKind,
    weights: Vec<S>,
    support: Vec<usize>,
}

impl<S: Scalar> StateWeighting<S> {
    /// Uniform over `states` (typically the reachable set) out of `num_states`.
    pub fn uniform(num_states: usize, states: &[usize]) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Weighting("empty support".into()));
        }
        let mut weights = vec![S::zero(); num_states];
        let w = S::one() / S::from_count(states.len());
        for &s in states {
            if s >= num_states {
                return Err(Error::Weighting(format!("state {s} out of range")));
            }
            weights[s] = w;
        }
        Self::build(WeightingKind::UniformOverReachable, weights)
    }

    pub fn uniform_over_reachable(mdp: &TabularMdp<S>) -> Result<Self> {
        Self::uniform(mdp.num_states(), &mdp.reachable_states())
    }

    pub fn explicit(weights: Vec<S>) -> Result<Self> {
        Self::build(WeightingKind::Explicit, weights)
    }

    /// Normalised visit counts.
    pub fn from_visit_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Weighting("no visits".into()));
        }
        let t = S::lit(total as f64);
        let weights = counts.iter().map(|&c| S::lit(c as f64) / t).collect();
        Self::build(WeightingKind::EmpiricalVisits, weights)
    }

    fn build(kind: WeightingKind, weights: Vec<S>) -> Result<Self> {
        if weights.iter().any(|&w| w < S::zero() || !w.is_finite()) {
            return Err(Error::Weighting("weights must be finite and non-negative".into()));
        }
        let total: S = weights.iter().copied().sum();
        let tol = S::lit(1e-9).max(S::epsilon() * S::from_count(4 * weights.len()));
        if (total - S::one()).abs() > tol {
            return Err(Error::Weighting(format!("weights sum to {total}")));
        }
        let support = (0..weights.len()).filter(|&s| weights[s] > S::zero()).collect();
        Ok(Self { kind, weights, support })
    }

    pub fn kind(&self) -> WeightingKind {
        self.kind
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn weight(&self, s: usize) -> S {
        self.weights[s]
    }

    /// States with positive weight, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn num_states(&self) -> usize {
        self.weights.len()
    }
}

/// Total variation distance between `pi(. | s)` and `pi_prime(. | s)`.
pub fn per_state_change<S: Scalar>(pi: &Policy<S>, pi_prime: &Policy<S>, s: usize) -> S {
    let half = S::lit(0.5);
    pi.row(s).iter().zip(pi_prime.row(s)).map(|(&a, &b)| (a - b).abs()).sum::<S>() * half
}

/// `E_{s ~ mu}[W(pi, pi' | s)]`.
pub fn aggregate_change<S: Scalar>(pi: &Policy<S>, pi_prime: &Policy<S>, mu: &StateWeighting<S>) -> Result<S> {
    if pi.num_states() != pi_prime.num_states() || pi.num_actions() != pi_prime.num_actions() {
        return Err(Error::Shape("policies disagree in shape".into()));
    }
    if mu.num_states() != pi.num_states() {
        return Err(Error::Weighting(format!(
            "weighting over {} states, policies over {}",
            mu.num_states(),
            pi.num_states()
        )));
    }
    Ok(mu.support().iter().map(|&s| mu.weight(s) * per_state_change(pi, pi_prime, s)).sum())
}

/// Change between policy snapshots taken `k` updates apart.
pub fn interval_change<S: Scalar>(pi_t: &Policy<S>, pi_t_plus_k: &Policy<S>, mu: &StateWeighting<S>) -> Result<S> {
    aggregate_change(pi_t, pi_t_plus_k, mu)
}

/// Aggregate change between deterministic policies given as action vectors,
/// uniformly weighted over `states`: the fraction of switched states.
pub fn switch_fraction<S: Scalar>(before: &[usize], after: &[usize], states: &[usize]) -> S {
    let switched = states.iter().filter(|&&s| before[s] != after[s]).count();
    S::from_count(switched) / S::from_count(states.len().max(1))
}

/// `W_{0:P}`: sum of the first `p` per-update changes.
pub fn cumulative_change<S: Scalar>(churn: &[S], p: usize) -> Result<S> {
    if p > churn.len() {
        return Err(Error::TraceRange { index: p, len: churn.len() });
    }
    Ok(churn[..p].iter().fold(S::zero(), |acc, &w| acc + w))
}

/// Finite-horizon estimate of `W+`: mean per-update change over `[p, p + horizon)`.
pub fn post_convergence_change<S: Scalar>(churn: &[S], p: usize, horizon: usize) -> Result<S> {
    if horizon == 0 {
        return Err(Error::TraceRange { index: p, len: churn.len() });
    }
    if p + horizon > churn.len() {
        return Err(Error::TraceRange { index: p + horizon, len: churn.len() });
    }
    Ok(churn[p..p + horizon].iter().fold(S::zero(), |acc, &w| acc + w) / S::from_count(horizon))
}

/// Time-indexed policy-change record of one learning run.
///
/// Entry `i` holds `W(pi_i, pi_{i+1})` measured right after update `i + 1`,
/// together with the configured `W(pi_{t-k}, pi_t)` look-backs (absent until
/// `k` updates have happened), the mean action gap and the greedy return.
#[derive(Debug, Clone, PartialEq)]
pub struct ChurnTrace<S> {
    interval_ks: Vec<usize>,
    updates: Vec<u64>,
    churn: Vec<S>,
    interval: Vec<Option<S>>,
    mean_gap: Vec<S>,
    greedy_return: Vec<S>,
    convergence_step: Option<usize>,
}

impl<S: Scalar> ChurnTrace<S> {
    pub fn new(interval_ks: Vec<usize>) -> Self {
        Self {
            interval_ks,
            updates: Vec::new(),
            churn: Vec::new(),
            interval: Vec::new(),
            mean_gap: Vec::new(),
            greedy_return: Vec::new(),
            convergence_step: None,
        }
    }

    pub fn push(&mut self, update: u64, churn: S, interval: &[Option<S>], mean_gap: S, greedy_return: S) -> Result<()> {
        if interval.len() != self.interval_ks.len() {
            return Err(Error::Shape("interval values do not match configured k".into()));
        }
        if let Some(&last) = self.updates.last() {
            if update <= last {
                return Err(Error::Config(format!("update index {update} not after {last}")));
            }
        }
        debug_assert!(churn >= S::zero() && churn <= S::one() + S::lit(1e-12));
        self.updates.push(update);
        self.churn.push(churn);
        self.interval.extend_from_slice(interval);
        self.mean_gap.push(mean_gap);
        self.greedy_return.push(greedy_return);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.churn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.churn.is_empty()
    }

    pub fn interval_ks(&self) -> &[usize] {
        &self.interval_ks
    }

    pub fn updates(&self) -> &[u64] {
        &self.updates
    }

    pub fn churn(&self) -> &[S] {
        &self.churn
    }

    pub fn mean_gap(&self) -> &[S] {
        &self.mean_gap
    }

    pub fn greedy_return(&self) -> &[S] {
        &self.greedy_return
    }

    /// Look-back values of entry `i`, one per configured `k`.
    pub fn interval_at(&self, i: usize) -> &[Option<S>] {
        let w = self.interval_ks.len();
        &self.interval[i * w..(i + 1) * w]
    }

    pub fn convergence_step(&self) -> Option<usize> {
        self.convergence_step
    }

    pub fn set_convergence_step(&mut self, p: usize) {
        self.convergence_step = Some(p);
    }

    pub fn cumulative_change(&self, p: usize) -> Result<S> {
        cumulative_change(&self.churn, p)
    }

    pub fn post_convergence_change(&self, p: usize, horizon: usize) -> Result<S> {
        post_convergence_change(&self.churn, p, horizon)
    }
}

/// Largest minus second-largest action value, counting multiplicity.
pub fn action_gap<S: Scalar>(values: &[S]) -> Result<S> {
    if values.len() < 2 {
        return Err(Error::TooFewActions(values.len()));
    }
    Ok(gap_unchecked(values))
}

#[inline]
pub(crate) fn gap_unchecked<S: Scalar>(values: &[S]) -> S {
    let (mut best, mut second) = (S::neg_infinity(), S::neg_infinity());
    for &v in values {
        if v > best {
            second = best;
            best = v;
        } else if v > second {
            second = v;
        }
    }
    best - second
}

/// `mu`-weighted mean action gap of a Q-table.
pub fn mean_action_gap<S: Scalar>(q: &QTable<S>, mu: &StateWeighting<S>) -> Result<S> {
    if q.num_actions() < 2 {
        return Err(Error::TooFewActions(q.num_actions()));
    }
    if mu.num_states() != q.num_states() {
        return Err(Error::Weighting("weighting and table disagree in size".into()));
    }
    Ok(mu.support().iter().map(|&s| mu.weight(s) * gap_unchecked(q.row(s))).sum())
}

/// Counts of `(previous argmax, new argmax)` switches accumulated over a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchConfusion {
    num_actions: usize,
    counts: Vec<u64>,
    states_compared: u64,
}

impl SwitchConfusion {
    pub fn new(num_actions: usize) -> Self {
        Self { num_actions, counts: vec![0; num_actions * num_actions], states_compared: 0 }
    }

    /// Adds one comparison of deterministic policies over `states`.
    pub fn record(&mut self, before: &[usize], after: &[usize], states: &[usize]) {
        for &s in states {
            let (old, new) = (before[s], after[s]);
            if old != new {
                self.counts[old * self.num_actions + new] += 1;
            }
        }
        self.states_compared += states.len() as u64;
    }

    pub fn count(&self, from: usize, to: usize) -> u64 {
        self.counts[from * self.num_actions + to]
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn states_compared(&self) -> u64 {
        self.states_compared
    }

    pub fn total_switches(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.num_actions).map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.num_actions)
            .map(|to| (0..self.num_actions).map(|from| self.count(from, to)).sum())
            .collect()
    }
}

/// Certified lower bound on the null-space diameter of a deterministic policy.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceBound<S> {
    /// Fraction of reachable decision states whose tie set has >= 2 actions.
    pub diameter_lower_bound: S,
    /// Per-state actions whose value equals `v_pi(s)` within tolerance.
    pub tie_sets: Vec<Vec<usize>>,
}

pub const VALUE_TIE_TOLERANCE: f64 = 1e-9;

/// Tie sets of `q_pi` against `v_pi`. Any policy that stays inside the tie
/// sets has the same values as `pi`, so two such policies disagreeing on
/// every multi-action tie set witness the returned diameter. Measured
/// uniformly over reachable non-terminal states.
pub fn null_space_tied_diameter<S: Scalar>(mdp: &TabularMdp<S>, pi: &Policy<S>) -> Result<NullSpaceBound<S>> {
    if !pi.is_deterministic() {
        return Err(Error::Config("null-space bound expects a deterministic policy".into()));
    }
    let q = dp::exact_policy_evaluation(mdp, pi)?;
    let tol = S::lit(VALUE_TIE_TOLERANCE);
    let actions = pi.modal_actions();
    let tie_sets: Vec<Vec<usize>> = (0..mdp.num_states())
        .map(|s| {
            let v = q.get(s, actions[s]);
            (0..mdp.num_actions()).filter(|&a| (q.get(s, a) - v).abs() <= tol).collect()
        })
        .collect();
    let states = mdp.reachable_decision_states();
    let tied = states.iter().filter(|&&s| tie_sets[s].len() >= 2).count();
    Ok(NullSpaceBound {
        diameter_lower_bound: S::from_count(tied) / S::from_count(states.len().max(1)),
        tie_sets,
    })
}

/// Largest number of policies the brute-force diameter will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

/// Exact null-space diameter over deterministic policies by enumeration.
///
/// Enumerates every deterministic policy on the reachable decision states
/// (other states follow `reference`), keeps those whose state values match
/// the reference's everywhere within 1e-9, and returns their largest pairwise
/// switch fraction under uniform weighting of the decision states.
pub fn null_space_diameter_bruteforce<S: Scalar>(mdp: &TabularMdp<S>, reference: &[usize]) -> Result<S> {
    if reference.len() != mdp.num_states() {
        return Err(Error::Shape("reference policy length".into()));
    }
    let states = mdp.reachable_decision_states();
    let m = mdp.num_actions() as u64;
    let mut total: u64 = 1;
    for _ in &states {
        total = total.saturating_mul(m);
        if total > BRUTE_FORCE_LIMIT {
            return Err(Error::TooLarge(format!(
                "{} actions over {} states exceeds {BRUTE_FORCE_LIMIT} policies",
                m,
                states.len()
            )));
        }
    }
    let tol = S::lit(VALUE_TIE_TOLERANCE);
    let v_ref = dp::state_values(mdp, &Policy::deterministic(mdp.num_actions(), reference))?;
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut actions = reference.to_vec();
    for code in 0..total {
        let mut c = code;
        for &s in &states {
            actions[s] = (c % m) as usize;
            c /= m;
        }
        let v = dp::state_values(mdp, &Policy::deterministic(mdp.num_actions(), &actions))?;
        if v.iter().zip(&v_ref).all(|(&a, &b)| (a - b).abs() <= tol) {
            members.push(states.iter().map(|&s| actions[s]).collect());
        }
    }
    let mut widest = 0usize;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            let d = members[i].iter().zip(&members[j]).filter(|(a, b)| a != b).count();
            widest = widest.max(d);
        }
    }
    Ok(S::from_count(widest) / S::from_count(states.len().max(1)))
}
