//! Per-state churn maps bucketed into periods relative to `P`.

use std::fmt::Write as _;
use std::path::Path;

use churn_lab::learners::Task;
use churn_lab::mdp::{Catch, StateAnnotation};
use churn_lab::metrics::action_gap;

use crate::records::{write_text, PERSTATE_COLUMNS, PERSTATE_SCHEMA, SCHEMA_PREFIX};
use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Period {
    Early,
    PreConvergence,
    PostConvergence,
    Late,
}

impl Period {
    pub const ALL: [Period; 4] = [Period::Early, Period::PreConvergence, Period::PostConvergence, Period::Late];

    pub fn label(self) -> &'static str {
        match self {
            Period::Early => "early",
            Period::PreConvergence => "pre-convergence",
            Period::PostConvergence => "post-convergence",
            Period::Late => "late",
        }
    }

    /// Trace-index window `[start, end)` for convergence step `p` and a trace
    /// of `len` entries: `[0, P/2)`, `[P/2, P)`, `[P, 2P)`, `[2P, len)`.
    pub fn window(self, p: usize, len: usize) -> (usize, usize) {
        let clip = |x: usize| x.min(len);
        match self {
            Period::Early => (0, clip(p / 2)),
            Period::PreConvergence => (clip(p / 2), clip(p)),
            Period::PostConvergence => (clip(p), clip(2 * p)),
            Period::Late => (clip(2 * p), len),
        }
    }
}

/// Mean per-update churn of each state within each period for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PerStateMap {
    pub period: Period,
    /// Indexed by state; `None` for an empty window.
    pub churn: Vec<Option<f64>>,
}

/// Buckets argmax switch events of one converged run.
///
/// `switches` holds `(update, state)` with updates counted from 1, so update
/// `u` is the churn between trace entries `u - 1` and `u`.
pub fn bucket_per_state(switches: &[(u64, usize)], p: Option<u64>, trace_len: usize, num_states: usize) -> Result<Vec<PerStateMap>> {
    let p = p.ok_or_else(|| HarnessError::Invalid("per-state maps need a converged run".into()))? as usize;
    let mut out = Vec::with_capacity(4);
    for period in Period::ALL {
        let (start, end) = period.window(p, trace_len);
        let mut counts = vec![0u64; num_states];
        for &(u, s) in switches {
            let i = (u as usize).checked_sub(1).ok_or_else(|| HarnessError::Invalid("switch at update 0".into()))?;
            if s >= num_states {
                return Err(HarnessError::Invalid(format!("switch at state {s} beyond {num_states} states")));
            }
            if (start..end).contains(&i) {
                counts[s] += 1;
            }
        }
        let len = end - start;
        let churn = counts.iter().map(|&c| (len > 0).then(|| c as f64 / len as f64)).collect();
        out.push(PerStateMap { period, churn });
    }
    Ok(out)
}

/// Cross-run mean map for one period over the given decision states.
#[derive(Debug, Clone, PartialEq)]
pub struct PerStateRow {
    pub period: Period,
    pub state: usize,
    pub gap_nonzero: bool,
    pub mean_churn: f64,
    pub runs: usize,
}

/// Averages per-run maps state by state, skipping empty windows.
pub fn average_maps(runs: &[Vec<PerStateMap>], task: &Task<f64>) -> Result<Vec<PerStateRow>> {
    let mut rows = Vec::new();
    for period in Period::ALL {
        for &s in &task.decision_states {
            let values: Vec<f64> =
                runs.iter().filter_map(|maps| maps.iter().find(|m| m.period == period).and_then(|m| m.churn[s])).collect();
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().fold(0.0, |a, v| a + v) / values.len() as f64;
            let gap_nonzero = action_gap(task.q_star.row(s))? > 0.0;
            rows.push(PerStateRow { period, state: s, gap_nonzero, mean_churn: mean, runs: values.len() });
        }
    }
    Ok(rows)
}

/// Mean churn over nonzero-gap and zero-gap states for one period.
pub fn gap_split(rows: &[PerStateRow], period: Period) -> (Option<f64>, Option<f64>) {
    let mean = |nonzero: bool| {
        let v: Vec<f64> = rows.iter().filter(|r| r.period == period && r.gap_nonzero == nonzero).map(|r| r.mean_churn).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    (mean(true), mean(false))
}

pub fn write_perstate(path: &Path, rows: &[PerStateRow], annotation: &StateAnnotation) -> Result<()> {
    let mut out = format!("{SCHEMA_PREFIX}{PERSTATE_SCHEMA}\n{}\n", PERSTATE_COLUMNS.join(","));
    for r in rows {
        let c = |axis: &str| annotation.coordinate(r.state, axis).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.period.label(),
            r.state,
            c("ball_x"),
            c("ball_y"),
            c("paddle_x"),
            r.gap_nonzero,
            r.mean_churn,
            r.runs
        );
    }
    write_text(path, &out)
}

/// Annotation for the Catch board the per-state suite uses.
pub fn catch_annotation(rows: usize, cols: usize) -> Result<StateAnnotation> {
    Ok(Catch::<f64>::new(rows, cols)?.annotation)
}
