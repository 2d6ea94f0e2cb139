//! Execution of a single `(cell, seed)` unit into an in-memory trace.

use churn_lab::dp::{self, DpTrace};
use churn_lab::learners::{tabular_q_step, train_variant, Task, Transition};
use churn_lab::mdp::{Catch, ChainMdp, FourRooms, TabularMdp, TwoArmBandit, RED};
use churn_lab::metrics::{action_gap, StateWeighting};
use churn_lab::policy::{argmax_first, greedy, Policy, QTable, TieMode};

use crate::records::TraceFile;
use crate::suites::{CellKind, DpEnv, Env};
use crate::{Cell, Result};

/// Sup-norm tolerance for value iteration cells.
pub const VI_TOLERANCE: f64 = 1e-10;

/// Everything one unit writes.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitOutput {
    pub trace: TraceFile,
    /// Argmax switch events, when the cell records them.
    pub switches: Option<Vec<(u64, usize)>>,
}

/// Mixed into the run seed to pick a DeepSea action mapping.
const MAPPING_SEED_MIX: u64 = 0x5EA0_FAC7;

/// Task for `env`; `seed` only matters for environments drawn per run.
pub fn learner_task(env: Env, seed: u64) -> Result<Task<f64>> {
    Ok(match env {
        Env::Catch { rows, cols } => Task::catch(rows, cols)?,
        Env::DeepSea { depth, mapped } => Task::deep_sea(depth, mapped.then_some(seed ^ MAPPING_SEED_MIX))?,
    })
}

pub fn dp_model(env: DpEnv) -> Result<TabularMdp<f64>> {
    Ok(match env {
        DpEnv::Catch { rows, cols } => Catch::new(rows, cols)?.mdp,
        DpEnv::FourRooms { size, discount } => FourRooms::new(size, discount)?.mdp,
    })
}

fn blank(suite: &str, cell: &str, seed: u64, index_name: &str, columns: &[&str]) -> TraceFile {
    TraceFile {
        suite: suite.into(),
        cell: cell.into(),
        seed,
        p: None,
        horizon: 0,
        index_name: index_name.into(),
        index: Vec::new(),
        columns: columns.iter().map(|c| c.to_string()).collect(),
        rows: Vec::new(),
    }
}

fn dp_trace(mut out: TraceFile, trace: &DpTrace<f64>) -> TraceFile {
    for it in &trace.iterates {
        out.index.push(it.k as u64);
        out.rows.push(vec![Some(it.churn), Some(it.sup_norm_delta), Some(it.greedy_return), Some(it.mean_gap)]);
    }
    out.p = Some(trace.convergence_step as u64);
    out
}

/// The single-jump oracle from the uniform policy to the first-index greedy
/// optimal policy.
pub fn oracle(mdp: &TabularMdp<f64>) -> Result<f64> {
    let vi = dp::value_iteration(mdp, VI_TOLERANCE, TieMode::Share)?;
    let pi_star = greedy(vi.final_q(), TieMode::FirstIndex)?;
    let mu = StateWeighting::uniform_over_reachable(mdp)?;
    Ok(dp::oracle_change(&Policy::uniform(mdp.num_states(), mdp.num_actions()), &pi_star, &mu)?)
}

/// Alternating tabular updates on the two-armed bandit, starting with the
/// arm that is not greedy at initialization. Returns per-update
/// `(greedy arm, switched, q)`.
pub fn bandit_updates(q_init: [f64; 2], q_target: [f64; 2], alpha: f64, updates: usize) -> Result<Vec<(usize, bool, [f64; 2])>> {
    let bandit = TwoArmBandit::new(q_init, q_target)?;
    let s = TwoArmBandit::<f64>::DECISION_STATE;
    let mut q = QTable::zeros(bandit.mdp.num_states(), 2);
    q.row_mut(s).copy_from_slice(&q_init);
    let mut greedy_arm = argmax_first(q.row(s));
    let first = 1 - greedy_arm;
    let mut out = Vec::with_capacity(updates);
    for i in 0..updates {
        let a = (first + i) % 2;
        let t = Transition { state: s, action: a, reward: bandit.mdp.reward(s, a), next_state: TwoArmBandit::<f64>::TERMINAL_STATE, terminal: true };
        tabular_q_step(&mut q, &t, alpha, bandit.mdp.discount());
        let now = argmax_first(q.row(s));
        out.push((now, now != greedy_arm, [q.get(s, 0), q.get(s, 1)]));
        greedy_arm = now;
    }
    Ok(out)
}

/// Longest run of consecutive updates that each switched the greedy arm.
pub fn longest_switch_streak(updates: &[(usize, bool, [f64; 2])]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for &(_, switched, _) in updates {
        run = if switched { run + 1 } else { 0 };
        best = best.max(run);
    }
    best
}

/// Runs `cell` for `seed`.
pub fn execute(suite: &str, cell: &Cell, seed: u64) -> Result<UnitOutput> {
    let label = cell.label.as_str();
    let mut switches = None;
    let trace = match &cell.kind {
        CellKind::Learner { env, config } => {
            let task = learner_task(*env, seed)?;
            let run = train_variant(&task, config, seed)?;
            let ks = run.trace.interval_ks().to_vec();
            let mut columns = vec!["churn".to_string()];
            columns.extend(ks.iter().map(|k| format!("at_{k}")));
            columns.extend(["mean_gap".to_string(), "greedy_return".to_string()]);
            let col_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
            let mut out = blank(suite, label, seed, "update", &col_refs);
            for i in 0..run.trace.len() {
                let mut row = vec![Some(run.trace.churn()[i])];
                row.extend(run.trace.interval_at(i).iter().copied());
                row.push(Some(run.trace.mean_gap()[i]));
                row.push(Some(run.trace.greedy_return()[i]));
                out.index.push(run.trace.updates()[i]);
                out.rows.push(row);
            }
            out.p = run.convergence_step;
            out.horizon = run.post_horizon;
            if config.record_switches {
                switches = Some(run.switch_events.clone());
            }
            out
        }
        CellKind::ValueIteration { env } => {
            let mdp = dp_model(*env)?;
            let vi = dp::value_iteration(&mdp, VI_TOLERANCE, TieMode::Share)?;
            dp_trace(blank(suite, label, seed, "k", &["churn", "sup_norm_delta", "greedy_return", "mean_gap"]), &vi)
        }
        CellKind::PolicyIteration { env } => {
            let mdp = dp_model(*env)?;
            let pi = dp::policy_iteration(&mdp, TieMode::Share)?;
            dp_trace(blank(suite, label, seed, "k", &["churn", "sup_norm_delta", "greedy_return", "mean_gap"]), &pi)
        }
        CellKind::Oracle { env } => {
            let mdp = dp_model(*env)?;
            let mut out = blank(suite, label, seed, "k", &["churn", "mean_gap"]);
            out.index.push(1);
            out.rows.push(vec![Some(oracle(&mdp)?), None]);
            out.p = Some(1);
            out
        }
        CellKind::Bandit { q_init, q_target, alpha, updates } => {
            let steps = bandit_updates(*q_init, *q_target, *alpha, *updates)?;
            let mut out = blank(suite, label, seed, "update", &["greedy_arm", "churn", "q0", "q1", "mean_gap"]);
            for (i, (arm, switched, q)) in steps.iter().enumerate() {
                out.index.push(i as u64 + 1);
                let churn = if *switched { 1.0 } else { 0.0 };
                out.rows.push(vec![Some(*arm as f64), Some(churn), Some(q[0]), Some(q[1]), Some(action_gap(q)?)]);
            }
            out
        }
        CellKind::ChainDemo { arm_length, steps } => {
            let chain = ChainMdp::<f64>::new(*arm_length)?;
            let n = chain.mdp.num_states();
            let red = Policy::deterministic(3, &vec![RED; n]);
            let q_red = dp::exact_policy_evaluation(&chain.mdp, &red)?;
            let pi_prime = greedy(&q_red, TieMode::FirstIndex)?;
            let demo = dp::evaluation_churn_demo(&chain.mdp, &red, &pi_prime, *steps, chain.decision_state, TieMode::FirstIndex)?;
            let mut out = blank(suite, label, seed, "k", &["greedy_action", "state_churn", "churn", "mean_gap"]);
            for step in demo {
                out.index.push(step.k as u64);
                out.rows.push(vec![Some(step.greedy_action as f64), Some(step.state_churn), Some(step.aggregate_churn), None]);
            }
            out
        }
    };
    Ok(UnitOutput { trace, switches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suites::suite;

    #[test]
    fn bandit_switches_on_every_update_for_thousands_of_steps() {
        let steps = bandit_updates([0.0, 0.001], [10.0, 10.001], 0.001, 1000).unwrap();
        assert_eq!(longest_switch_streak(&steps), 1000);
        let symmetric = bandit_updates([0.0, 0.0], [10.0, 10.0], 0.5, 10).unwrap();
        assert!(longest_switch_streak(&symmetric) >= 1);
    }

    #[test]
    fn chain_cell_alternates() {
        let s = suite("chain-oscillation").unwrap();
        let out = execute("chain-oscillation", &s.cells[0], 0).unwrap();
        let state_churn = out.trace.series("state_churn").unwrap();
        assert_eq!(state_churn.len(), 50);
        assert!(state_churn.iter().all(|&c| c == Some(1.0)));
    }

    #[test]
    fn catch_value_iteration_cell() {
        let s = suite("catch-spectrum").unwrap();
        let out = execute("catch-spectrum", s.cell("value-iteration").unwrap(), 0).unwrap();
        assert_eq!(out.trace.p, Some(10));
    }
}
