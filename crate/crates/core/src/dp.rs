//! Exact dynamic programming over a [`TabularMdp`], instrumented to record
//! the greedy policy after every iterate.

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::metrics::{self, StateWeighting};
use crate::policy::{argmax_first, greedy, greedy_with_tolerance, Policy, QTable, TieMode};
use crate::scalar::Scalar;

/// Sweep cap for value iteration.
pub const MAX_SWEEPS: usize = 100_000;
/// Improvement-step cap for policy iteration.
pub const MAX_IMPROVEMENTS: usize = 10_000;
/// Tie tolerance for greedy policies of exactly evaluated Q-tables.
pub const EVALUATED_TIE_TOLERANCE: f64 = 1e-9;

fn check_table<S: Scalar>(mdp: &TabularMdp<S>, q: &QTable<S>) -> Result<()> {
    if q.num_states() != mdp.num_states() || q.num_actions() != mdp.num_actions() {
        return Err(Error::Shape(format!(
            "table {}x{} for model {}x{}",
            q.num_states(),
            q.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

fn check_policy<S: Scalar>(mdp: &TabularMdp<S>, pi: &Policy<S>) -> Result<()> {
    if pi.num_states() != mdp.num_states() || pi.num_actions() != mdp.num_actions() {
        return Err(Error::Shape("policy does not match model".into()));
    }
    Ok(())
}

/// `T_pi q (s, a) = r(s, a) + gamma * E_{s' ~ p, a' ~ pi(s')} q(s', a')`.
pub fn bellman_policy_backup<S: Scalar>(mdp: &TabularMdp<S>, q: &QTable<S>, pi: &Policy<S>) -> Result<QTable<S>> {
    check_table(mdp, q)?;
    check_policy(mdp, pi)?;
    let next_value: Vec<S> = (0..mdp.num_states())
        .map(|s| q.row(s).iter().zip(pi.row(s)).map(|(&v, &p)| v * p).sum())
        .collect();
    Ok(backup_with(mdp, &next_value))
}

/// `T q (s, a) = r(s, a) + gamma * E_{s'} max_{a'} q(s', a')`.
pub fn bellman_optimality_backup<S: Scalar>(mdp: &TabularMdp<S>, q: &QTable<S>) -> Result<QTable<S>> {
    check_table(mdp, q)?;
    let next_value: Vec<S> = (0..mdp.num_states()).map(|s| q.state_value(s)).collect();
    Ok(backup_with(mdp, &next_value))
}

fn backup_with<S: Scalar>(mdp: &TabularMdp<S>, next_value: &[S]) -> QTable<S> {
    let gamma = mdp.discount();
    QTable::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        let cont: S = mdp.successors(s, a).iter().map(|&(n, p)| p * next_value[n]).sum();
        mdp.reward(s, a) + gamma * cont
    })
}

/// `v_pi` by a direct linear solve of `(I - gamma P_pi) v = r_pi` over
/// non-terminal states; terminal states are pinned at 0.
pub fn state_values<S: Scalar>(mdp: &TabularMdp<S>, pi: &Policy<S>) -> Result<Vec<S>> {
    check_policy(mdp, pi)?;
    let n = mdp.num_states();
    let free: Vec<usize> = (0..n).filter(|&s| !mdp.is_terminal(s)).collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &s) in free.iter().enumerate() {
        slot[s] = i;
    }
    let m = free.len();
    let gamma = mdp.discount();
    let mut a = vec![S::zero(); m * m];
    let mut b = vec![S::zero(); m];
    for (i, &s) in free.iter().enumerate() {
        a[i * m + i] = S::one();
        for act in 0..mdp.num_actions() {
            let p_act = pi.prob(s, act);
            if p_act == S::zero() {
                continue;
            }
            b[i] += p_act * mdp.reward(s, act);
            for &(next, p) in mdp.successors(s, act) {
                if slot[next] != usize::MAX {
                    a[i * m + slot[next]] -= gamma * p_act * p;
                }
            }
        }
    }
    let x = solve_dense(&mut a, &mut b, m)?;
    let mut v = vec![S::zero(); n];
    for (i, &s) in free.iter().enumerate() {
        v[s] = x[i];
    }
    Ok(v)
}

/// Gaussian elimination with partial pivoting; consumes `a` and `b`.
fn solve_dense<S: Scalar>(a: &mut [S], b: &mut [S], m: usize) -> Result<Vec<S>> {
    let pivot_floor = S::lit(1e-12).max(S::epsilon() * S::lit(1e3));
    for col in 0..m {
        let mut best = col;
        for row in col + 1..m {
            if a[row * m + col].abs() > a[best * m + col].abs() {
                best = row;
            }
        }
        let pivot = a[best * m + col];
        if pivot.abs() < pivot_floor {
            return Err(Error::Singular { row: col, pivot: pivot.as_f64() });
        }
        if best != col {
            for k in 0..m {
                a.swap(col * m + k, best * m + k);
            }
            b.swap(col, best);
        }
        for row in col + 1..m {
            let factor = a[row * m + col] / pivot;
            if factor == S::zero() {
                continue;
            }
            for k in col..m {
                let upper = a[col * m + k];
                a[row * m + k] -= factor * upper;
            }
            let upper_b = b[col];
            b[row] -= factor * upper_b;
        }
    }
    let mut x = vec![S::zero(); m];
    for row in (0..m).rev() {
        let mut acc = b[row];
        for k in row + 1..m {
            acc -= a[row * m + k] * x[k];
        }
        x[row] = acc / a[row * m + row];
    }
    Ok(x)
}

/// `q_pi` via the linear fixed point of `T_pi`.
pub fn exact_policy_evaluation<S: Scalar>(mdp: &TabularMdp<S>, pi: &Policy<S>) -> Result<QTable<S>> {
    let v = state_values(mdp, pi)?;
    Ok(backup_with(mdp, &v))
}

/// Expected return of `pi` from the initial distribution.
pub fn policy_return<S: Scalar>(mdp: &TabularMdp<S>, pi: &Policy<S>) -> Result<S> {
    let v = state_values(mdp, pi)?;
    Ok(mdp.initial_distribution().iter().zip(&v).map(|(&p, &x)| p * x).sum())
}

/// One row of a DP trace; `k` counts sweeps (value iteration) or
/// improvement steps (policy iteration), starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DpIterate<S> {
    pub k: usize,
    /// `W(pi_{k-1}, pi_k)` under the trace's weighting.
    pub churn: S,
    pub sup_norm_delta: S,
    /// Expected return of `pi_k` from the initial distribution.
    pub greedy_return: S,
    pub mean_gap: S,
}

/// Greedy-policy trajectory of a DP run.
#[derive(Debug, Clone)]
pub struct DpTrace<S> {
    pub iterates: Vec<DpIterate<S>>,
    /// `q_0 .. q_K`; `q_tables[k]` induces `policies[k]`.
    pub q_tables: Vec<QTable<S>>,
    pub policies: Vec<Policy<S>>,
    /// Convergence step `P` under the selected [`ConvergenceCriterion`].
    pub convergence_step: usize,
    /// Iterations executed until the sup-norm test fired, the detecting
    /// iteration included.
    pub sup_norm_step: usize,
    /// First `k` whose greedy policy attains the optimal return.
    pub first_optimal: Option<usize>,
    pub weighting: StateWeighting<S>,
}

impl<S: Scalar> DpTrace<S> {
    pub fn churn(&self) -> Vec<S> {
        self.iterates.iter().map(|it| it.churn).collect()
    }

    /// `W_{0:P}` with `P` the convergence step.
    pub fn cumulative_change(&self) -> S {
        self.iterates[..self.convergence_step].iter().map(|it| it.churn).sum()
    }

    /// Table at the sup-norm fixed point.
    pub fn final_q(&self) -> &QTable<S> {
        &self.q_tables[self.sup_norm_step]
    }

    pub fn final_policy(&self) -> &Policy<S> {
        &self.policies[self.sup_norm_step]
    }
}

/// Which iterate counts as the convergence step `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceCriterion {
    /// Number of sweeps until one changes `q` by less than the tolerance.
    SupNorm,
    /// First iterate whose greedy policy attains the optimal return.
    FirstOptimal,
}

/// Knobs for [`value_iteration_with`].
#[derive(Debug, Clone, Copy)]
pub struct ValueIterationOptions<S> {
    pub tolerance: S,
    pub tie_mode: TieMode,
    pub criterion: ConvergenceCriterion,
    pub max_sweeps: usize,
    /// Sweeps to keep running after convergence (for post-convergence change).
    pub extra_sweeps: usize,
}

/// Value iteration from `q = 0` until the sup-norm change of a sweep drops
/// below `tolerance` (or is exactly zero). Churn is measured uniformly over
/// reachable states.
pub fn value_iteration<S: Scalar>(mdp: &TabularMdp<S>, tolerance: S, tie_mode: TieMode) -> Result<DpTrace<S>> {
    value_iteration_with(
        mdp,
        ValueIterationOptions {
            tolerance,
            tie_mode,
            criterion: ConvergenceCriterion::SupNorm,
            max_sweeps: MAX_SWEEPS,
            extra_sweeps: 0,
        },
    )
}

pub fn value_iteration_with<S: Scalar>(mdp: &TabularMdp<S>, opts: ValueIterationOptions<S>) -> Result<DpTrace<S>> {
    if opts.tolerance.is_nan() || opts.tolerance < S::zero() {
        return Err(Error::Config(format!("tolerance {} must be non-negative", opts.tolerance)));
    }
    let mu = StateWeighting::uniform_over_reachable(mdp)?;
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut pi = greedy(&q, opts.tie_mode)?;
    let mut trace = DpTrace {
        iterates: Vec::new(),
        q_tables: vec![q.clone()],
        policies: vec![pi.clone()],
        convergence_step: 0,
        sup_norm_step: 0,
        first_optimal: None,
        weighting: mu,
    };
    let mut converged_at = None;
    let mut k = 0;
    loop {
        if let Some(p) = converged_at {
            if k >= p + opts.extra_sweeps {
                break;
            }
        }
        if k >= opts.max_sweeps {
            return Err(Error::IterationCap { cap: opts.max_sweeps });
        }
        k += 1;
        let next = bellman_optimality_backup(mdp, &q)?;
        let delta = next.sup_distance(&q);
        let next_pi = greedy(&next, opts.tie_mode)?;
        let churn = metrics::aggregate_change(&pi, &next_pi, &trace.weighting)?;
        let ret = policy_return(mdp, &next_pi)?;
        let gap = metrics::mean_action_gap(&next, &trace.weighting).unwrap_or(S::zero());
        trace.iterates.push(DpIterate { k, churn, sup_norm_delta: delta, greedy_return: ret, mean_gap: gap });
        q = next;
        pi = next_pi;
        trace.q_tables.push(q.clone());
        trace.policies.push(pi.clone());
        if converged_at.is_none() && (delta < opts.tolerance || delta == S::zero()) {
            converged_at = Some(k);
        }
    }
    trace.sup_norm_step = converged_at.unwrap_or(k);
    trace.convergence_step = trace.sup_norm_step;
    mark_first_optimal(mdp, &mut trace)?;
    if opts.criterion == ConvergenceCriterion::FirstOptimal {
        trace.convergence_step = trace.first_optimal.unwrap_or(trace.sup_norm_step);
    }
    Ok(trace)
}

fn mark_first_optimal<S: Scalar>(mdp: &TabularMdp<S>, trace: &mut DpTrace<S>) -> Result<()> {
    let q_final = &trace.q_tables[trace.sup_norm_step];
    let best: S = mdp
        .initial_distribution()
        .iter()
        .enumerate()
        .map(|(s, &p)| p * q_final.state_value(s))
        .sum();
    let tol = S::lit(1e-9) * S::one().max(best.abs());
    let initial_return = policy_return(mdp, &trace.policies[0])?;
    trace.first_optimal = if initial_return >= best - tol {
        Some(0)
    } else {
        trace.iterates.iter().find(|it| it.greedy_return >= best - tol).map(|it| it.k)
    };
    Ok(())
}

/// Policy iteration from the uniform-random policy. Each step evaluates the
/// current policy exactly and takes the greedy policy of the result (ties
/// within [`EVALUATED_TIE_TOLERANCE`]); stops once a step leaves the policy
/// unchanged.
pub fn policy_iteration<S: Scalar>(mdp: &TabularMdp<S>, tie_mode: TieMode) -> Result<DpTrace<S>> {
    let mu = StateWeighting::uniform_over_reachable(mdp)?;
    let tol = S::lit(EVALUATED_TIE_TOLERANCE);
    let mut pi = Policy::uniform(mdp.num_states(), mdp.num_actions());
    let mut q_prev = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut trace = DpTrace {
        iterates: Vec::new(),
        q_tables: vec![exact_policy_evaluation(mdp, &pi)?],
        policies: vec![pi.clone()],
        convergence_step: 0,
        sup_norm_step: 0,
        first_optimal: None,
        weighting: mu,
    };
    for k in 1..=MAX_IMPROVEMENTS {
        let q = exact_policy_evaluation(mdp, &pi)?;
        let next_pi = greedy_with_tolerance(&q, tie_mode, tol)?;
        let churn = metrics::aggregate_change(&pi, &next_pi, &trace.weighting)?;
        let q_next = exact_policy_evaluation(mdp, &next_pi)?;
        let ret = policy_return(mdp, &next_pi)?;
        let gap = metrics::mean_action_gap(&q_next, &trace.weighting).unwrap_or(S::zero());
        trace.iterates.push(DpIterate { k, churn, sup_norm_delta: q_next.sup_distance(&q_prev), greedy_return: ret, mean_gap: gap });
        let stable = next_pi == pi;
        q_prev = q_next.clone();
        trace.q_tables.push(q_next);
        trace.policies.push(next_pi.clone());
        pi = next_pi;
        if stable {
            trace.convergence_step = k;
            trace.sup_norm_step = k;
            mark_first_optimal(mdp, &mut trace)?;
            return Ok(trace);
        }
    }
    Err(Error::IterationCap { cap: MAX_IMPROVEMENTS })
}

/// One step of [`evaluation_churn_demo`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationStep<S> {
    pub k: usize,
    /// Action of `pi_k = g(T_{pi'}^k q_pi)` at the watched state.
    pub greedy_action: usize,
    /// `W(pi_{k-1}, pi_k | s)` at the watched state, with `pi_0 = pi`.
    pub state_churn: S,
    /// `W(pi_{k-1}, pi_k)` uniformly over reachable states.
    pub aggregate_churn: S,
}

/// Iterated evaluation of `pi_prime` starting from `q_pi`, watching how the
/// greedy policy at `state` moves along `g(T_{pi'}^k q_pi)`, `k = 1..=steps`.
pub fn evaluation_churn_demo<S: Scalar>(
    mdp: &TabularMdp<S>,
    pi: &Policy<S>,
    pi_prime: &Policy<S>,
    steps: usize,
    state: usize,
    tie_mode: TieMode,
) -> Result<Vec<EvaluationStep<S>>> {
    if steps == 0 {
        return Err(Error::Config("need at least one evaluation step".into()));
    }
    let mu = StateWeighting::uniform_over_reachable(mdp)?;
    let mut q = exact_policy_evaluation(mdp, pi)?;
    let mut previous = pi.clone();
    let mut out = Vec::with_capacity(steps);
    for k in 1..=steps {
        q = bellman_policy_backup(mdp, &q, pi_prime)?;
        let current = greedy(&q, tie_mode)?;
        out.push(EvaluationStep {
            k,
            greedy_action: argmax_first(current.row(state)),
            state_churn: metrics::per_state_change(&previous, &current, state),
            aggregate_churn: metrics::aggregate_change(&previous, &current, &mu)?,
        });
        previous = current;
    }
    Ok(out)
}

/// Churn of the single-jump oracle `pi_0 -> pi*`; at most one unit.
pub fn oracle_change<S: Scalar>(pi_0: &Policy<S>, pi_star: &Policy<S>, mu: &StateWeighting<S>) -> Result<S> {
    metrics::aggregate_change(pi_0, pi_star, mu)
}
