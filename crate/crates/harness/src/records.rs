//! CSV record files: per-run traces, summaries and aggregates.
//!
//! Every file starts with a `#schema=churn-lab/<kind>/<version>` line.
//! Floats are written in shortest round-trip form, so a summary recomputed
//! from a parsed trace is bit-identical to the one computed at run time.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::stats::{percentile, Spread};
use crate::{io_err, HarnessError, Result};

pub const SCHEMA_PREFIX: &str = "#schema=churn-lab/";
pub const TRACE_SCHEMA: &str = "trace/1";
pub const SWITCHES_SCHEMA: &str = "switches/1";
pub const SUMMARY_SCHEMA: &str = "summary/1";
pub const AGGREGATE_SCHEMA: &str = "aggregate/1";
pub const PERSTATE_SCHEMA: &str = "perstate/1";

pub const SUMMARY_COLUMNS: [&str; 8] = ["suite", "cell", "seed", "converged", "p", "w_0p", "w_plus", "mean_gap"];
pub const AGGREGATE_COLUMNS: [&str; 9] =
    ["suite", "cell", "metric", "runs", "converged", "converged_fraction", "median", "q25", "q75"];
pub const PERSTATE_COLUMNS: [&str; 8] =
    ["period", "state", "ball_x", "ball_y", "paddle_x", "gap_nonzero", "mean_churn", "runs"];

/// Describes every file layout; written to `<suite>/schema.txt`.
pub fn schema_text() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{SCHEMA_PREFIX}{TRACE_SCHEMA}\t<cell>/<seed>/trace.csv\tindex column then churn, mean_gap and kind-specific columns; empty = not available");
    let _ = writeln!(s, "{SCHEMA_PREFIX}{SWITCHES_SCHEMA}\t<cell>/<seed>/switches.csv\tupdate,state");
    let _ = writeln!(s, "{SCHEMA_PREFIX}{SUMMARY_SCHEMA}\tsummary.csv\t{}", SUMMARY_COLUMNS.join(","));
    let _ = writeln!(s, "{SCHEMA_PREFIX}{AGGREGATE_SCHEMA}\taggregate.csv\t{}", AGGREGATE_COLUMNS.join(","));
    let _ = writeln!(s, "{SCHEMA_PREFIX}{PERSTATE_SCHEMA}\tperstate.csv\t{}", PERSTATE_COLUMNS.join(","));
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(field: &str) -> std::result::Result<Option<f64>, String> {
    if field.is_empty() {
        Ok(None)
    } else {
        field.parse::<f64>().map(Some).map_err(|_| format!("not a number: `{field}`"))
    }
}

/// One run's time series.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub suite: String,
    pub cell: String,
    pub seed: u64,
    /// Convergence step; `None` marks a timeout.
    pub p: Option<u64>,
    /// Post-convergence window length used for `W+`.
    pub horizon: u64,
    /// Name of the index column (`update` or `k`).
    pub index_name: String,
    pub index: Vec<u64>,
    /// Value column names; always contains `churn` and `mean_gap`.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl TraceFile {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn series(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.column(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "{SCHEMA_PREFIX}{TRACE_SCHEMA}");
        let p = self.p.map(|p| p.to_string()).unwrap_or_else(|| "timeout".into());
        let _ = writeln!(out, "#run suite={} cell={} seed={} p={p} horizon={}", self.suite, self.cell, self.seed, self.horizon);
        let _ = writeln!(out, "{},{}", self.index_name, self.columns.join(","));
        for (i, row) in self.index.iter().zip(&self.rows) {
            out.push_str(&i.to_string());
            for v in row {
                out.push(',');
                out.push_str(&fmt_opt(*v));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let bad = |message: String| HarnessError::Parse { path: path.to_path_buf(), message };
        let mut lines = text.lines();
        let schema = lines.next().unwrap_or_default();
        if schema != format!("{SCHEMA_PREFIX}{TRACE_SCHEMA}") {
            return Err(bad(format!("expected schema {TRACE_SCHEMA}, found `{schema}`")));
        }
        let run = lines.next().and_then(|l| l.strip_prefix("#run ")).ok_or_else(|| bad("missing #run line".into()))?;
        let mut meta = std::collections::BTreeMap::new();
        for part in run.split(' ') {
            let (k, v) = part.split_once('=').ok_or_else(|| bad(format!("bad #run field `{part}`")))?;
            meta.insert(k, v);
        }
        let get = |k: &str| meta.get(k).copied().ok_or_else(|| bad(format!("#run line lacks {k}")));
        let seed = get("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
        let p = match get("p")? {
            "timeout" => None,
            v => Some(v.parse().map_err(|_| bad(format!("bad p `{v}`")))?),
        };
        let horizon = get("horizon")?.parse().map_err(|_| bad("bad horizon".into()))?;
        let body: String = lines.collect::<Vec<_>>().join("\n");
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let headers = reader.headers()?.clone();
        let index_name = headers.get(0).ok_or_else(|| bad("empty header".into()))?.to_string();
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        for needed in ["churn", "mean_gap"] {
            if !columns.iter().any(|c| c == needed) {
                return Err(bad(format!("missing column {needed}")));
            }
        }
        let mut index = Vec::new();
        let mut rows = Vec::new();
        for (n, record) in reader.records().enumerate() {
            let record = record.map_err(|e| bad(format!("row {}: {e}", n + 1)))?;
            if record.len() != columns.len() + 1 {
                return Err(bad(format!("row {}: expected {} fields, found {}", n + 1, columns.len() + 1, record.len())));
            }
            index.push(record[0].parse().map_err(|_| bad(format!("row {}: bad index `{}`", n + 1, &record[0])))?);
            let row = record.iter().skip(1).map(parse_opt).collect::<std::result::Result<Vec<_>, _>>();
            rows.push(row.map_err(|e| bad(format!("row {}: {e}", n + 1)))?);
        }
        Ok(Self {
            suite: get("suite")?.to_string(),
            cell: get("cell")?.to_string(),
            seed,
            p,
            horizon,
            index_name,
            index,
            columns,
            rows,
        })
    }
}

/// Sum of `xs` folded left from `+0.0`.
pub fn fold_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |acc, x| acc + x)
}

fn fold_mean(xs: &[f64]) -> f64 {
    fold_sum(xs.iter().copied()) / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub suite: String,
    pub cell: String,
    pub seed: u64,
    pub p: Option<u64>,
    pub w_0p: f64,
    pub w_plus: Option<f64>,
    pub mean_gap: Option<f64>,
}

impl SummaryRow {
    pub fn converged(&self) -> bool {
        self.p.is_some()
    }
}

/// Derives a summary row from a trace.
///
/// `W_{0:P}` folds the first `P` churn entries (all of them on timeout).
/// With a positive horizon, `W+` and the gap are means over rows
/// `[P, P + horizon)`; otherwise the gap is taken from the last row.
/// Fails when the trace is shorter than its header promises.
pub fn summarize(trace: &TraceFile) -> Result<SummaryRow> {
    let churn_col = trace.column("churn").ok_or_else(|| HarnessError::Invalid("trace has no churn column".into()))?;
    let gap_col = trace.column("mean_gap").ok_or_else(|| HarnessError::Invalid("trace has no mean_gap column".into()))?;
    let run = format!("{}/{}/{}", trace.suite, trace.cell, trace.seed);
    let churn: Vec<f64> = trace
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| r[churn_col].ok_or_else(|| HarnessError::Invalid(format!("{run}: churn missing in row {}", i + 1))))
        .collect::<Result<_>>()?;
    let len = churn.len();
    let p = trace.p.map(|p| p as usize);
    let upto = p.unwrap_or(len);
    if upto > len {
        return Err(HarnessError::Invalid(format!("{run}: trace has {len} rows but P = {upto}")));
    }
    let w_0p = fold_sum(churn[..upto].iter().copied());
    let (w_plus, mean_gap) = match p {
        Some(p) if trace.horizon > 0 => {
            let end = p + trace.horizon as usize;
            if end > len {
                return Err(HarnessError::Invalid(format!("{run}: trace has {len} rows, post-convergence window needs {end}")));
            }
            let gaps: Option<Vec<f64>> = trace.rows[p..end].iter().map(|r| r[gap_col]).collect();
            (Some(fold_mean(&churn[p..end])), gaps.map(|g| fold_mean(&g)))
        }
        _ => (None, trace.rows.last().and_then(|r| r[gap_col])),
    };
    Ok(SummaryRow { suite: trace.suite.clone(), cell: trace.cell.clone(), seed: trace.seed, p: trace.p, w_0p, w_plus, mean_gap })
}

fn header(kind: &str, note: Option<&str>) -> String {
    let mut s = format!("{SCHEMA_PREFIX}{kind}\n");
    if let Some(n) = note {
        let _ = writeln!(s, "#note={n}");
    }
    s
}

pub fn write_summary(path: &Path, rows: &[SummaryRow], note: Option<&str>) -> Result<()> {
    let mut out = header(SUMMARY_SCHEMA, note);
    let _ = writeln!(out, "{}", SUMMARY_COLUMNS.join(","));
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.suite,
            r.cell,
            r.seed,
            r.converged(),
            r.p.map(|p| p.to_string()).unwrap_or_default(),
            r.w_0p,
            fmt_opt(r.w_plus),
            fmt_opt(r.mean_gap)
        );
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |message: String| HarnessError::Parse { path: path.to_path_buf(), message };
    let expected = format!("{SCHEMA_PREFIX}{SUMMARY_SCHEMA}");
    if text.lines().next() != Some(expected.as_str()) {
        return Err(bad(format!("expected schema {SUMMARY_SCHEMA}")));
    }
    let body: String = text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let r = record.map_err(|e| bad(format!("row {}: {e}", n + 1)))?;
        if r.len() != SUMMARY_COLUMNS.len() {
            return Err(bad(format!("row {}: expected {} fields", n + 1, SUMMARY_COLUMNS.len())));
        }
        let num = |i: usize| parse_opt(&r[i]).map_err(|e| bad(format!("row {}: {e}", n + 1)));
        rows.push(SummaryRow {
            suite: r[0].to_string(),
            cell: r[1].to_string(),
            seed: r[2].parse().map_err(|_| bad(format!("row {}: bad seed", n + 1)))?,
            p: if r[4].is_empty() { None } else { Some(r[4].parse().map_err(|_| bad(format!("row {}: bad p", n + 1)))?) },
            w_0p: num(5)?.ok_or_else(|| bad(format!("row {}: missing w_0p", n + 1)))?,
            w_plus: num(6)?,
            mean_gap: num(7)?,
        });
    }
    Ok(rows)
}

/// Order statistics of one metric of one cell over its converged runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAggregate {
    pub suite: String,
    pub cell: String,
    pub metric: &'static str,
    pub runs: usize,
    pub converged: usize,
    /// `None` when no converged run carries the metric.
    pub spread: Option<Spread>,
}

impl CellAggregate {
    pub fn converged_fraction(&self) -> f64 {
        self.converged as f64 / self.runs as f64
    }
}

pub const METRICS: [&str; 4] = ["p", "w_0p", "w_plus", "mean_gap"];

fn metric(row: &SummaryRow, name: &str) -> Option<f64> {
    match name {
        "p" => row.p.map(|p| p as f64),
        "w_0p" => Some(row.w_0p),
        "w_plus" => row.w_plus,
        "mean_gap" => row.mean_gap,
        _ => None,
    }
}

/// Per-cell, per-metric statistics over converged rows, in first-seen cell
/// order. Timed-out rows count towards `runs` only.
pub fn aggregate(rows: &[SummaryRow]) -> Vec<CellAggregate> {
    let mut cells: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        if !cells.contains(&(r.suite.as_str(), r.cell.as_str())) {
            cells.push((&r.suite, &r.cell));
        }
    }
    let mut out = Vec::new();
    for (suite, cell) in cells {
        let mine: Vec<&SummaryRow> = rows.iter().filter(|r| r.suite == suite && r.cell == cell).collect();
        let converged: Vec<&&SummaryRow> = mine.iter().filter(|r| r.converged()).collect();
        for name in METRICS {
            let values: Vec<f64> = converged.iter().filter_map(|r| metric(r, name)).collect();
            let spread = if values.is_empty() { None } else { crate::stats::spread(&values).ok() };
            out.push(CellAggregate {
                suite: suite.to_string(),
                cell: cell.to_string(),
                metric: name,
                runs: mine.len(),
                converged: converged.len(),
                spread,
            });
        }
    }
    out
}

/// Median of `metric` over the converged runs of one cell; fails when every
/// run was filtered out.
pub fn cell_median(rows: &[SummaryRow], cell: &str, metric_name: &str) -> Result<f64> {
    let values: Vec<f64> = rows.iter().filter(|r| r.cell == cell && r.converged()).filter_map(|r| metric(r, metric_name)).collect();
    if values.is_empty() {
        return Err(HarnessError::Empty(format!("cell {cell} has no converged run with {metric_name}")));
    }
    percentile(&values, 0.5)
}

pub fn write_aggregate(path: &Path, aggregates: &[CellAggregate]) -> Result<()> {
    let mut out = header(AGGREGATE_SCHEMA, None);
    let _ = writeln!(out, "{}", AGGREGATE_COLUMNS.join(","));
    for a in aggregates {
        let (m, lo, hi) = match a.spread {
            Some(s) => (s.median.to_string(), s.q25.to_string(), s.q75.to_string()),
            None => Default::default(),
        };
        let _ = writeln!(out, "{},{},{},{},{},{},{m},{lo},{hi}", a.suite, a.cell, a.metric, a.runs, a.converged, a.converged_fraction());
    }
    fs::write(path, out).map_err(io_err(path))
}

/// `(update, state)` pairs of argmax switches.
pub fn write_switches(path: &Path, events: &[(u64, usize)]) -> Result<()> {
    let mut out = header(SWITCHES_SCHEMA, None);
    out.push_str("update,state\n");
    for (u, s) in events {
        let _ = writeln!(out, "{u},{s}");
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_switches(path: &Path) -> Result<Vec<(u64, usize)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |message: String| HarnessError::Parse { path: path.to_path_buf(), message };
    if text.lines().next() != Some(format!("{SCHEMA_PREFIX}{SWITCHES_SCHEMA}").as_str()) {
        return Err(bad(format!("expected schema {SWITCHES_SCHEMA}")));
    }
    text.lines()
        .skip(2)
        .enumerate()
        .map(|(n, line)| {
            let (u, s) = line.split_once(',').ok_or_else(|| bad(format!("row {}: expected 2 fields", n + 1)))?;
            match (u.parse(), s.parse()) {
                (Ok(u), Ok(s)) => Ok((u, s)),
                _ => Err(bad(format!("row {}: bad integers", n + 1))),
            }
        })
        .collect()
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(p: Option<u64>, horizon: u64, churn: &[f64]) -> TraceFile {
        TraceFile {
            suite: "s".into(),
            cell: "c".into(),
            seed: 3,
            p,
            horizon,
            index_name: "update".into(),
            index: (1..=churn.len() as u64).collect(),
            columns: vec!["churn".into(), "mean_gap".into()],
            rows: churn.iter().map(|&c| vec![Some(c), Some(2.0 * c)]).collect(),
        }
    }

    #[test]
    fn summary_windows() {
        let t = trace(Some(2), 2, &[0.5, 0.25, 0.1, 0.3, 0.9]);
        let s = summarize(&t).unwrap();
        assert_eq!(s.w_0p, 0.75);
        assert!((s.w_plus.unwrap() - 0.2).abs() < 1e-15);
        assert!((s.mean_gap.unwrap() - 0.4).abs() < 1e-15);
        let timeout = summarize(&trace(None, 0, &[0.5, 0.5])).unwrap();
        assert_eq!((timeout.w_0p, timeout.w_plus, timeout.mean_gap), (1.0, None, Some(1.0)));
        assert!(summarize(&trace(Some(2), 5, &[0.0; 4])).is_err());
    }

    #[test]
    fn fold_starts_from_positive_zero() {
        assert!(fold_sum(std::iter::empty()).is_sign_positive());
        assert!(fold_sum([-0.0]).is_sign_positive());
    }

    #[test]
    fn aggregate_filters_timeouts() {
        let row = |seed, p: Option<u64>, w| SummaryRow {
            suite: "s".into(),
            cell: "c".into(),
            seed,
            p,
            w_0p: w,
            w_plus: None,
            mean_gap: None,
        };
        let rows: Vec<_> = (1..=5).map(|i| row(i, Some(i), i as f64)).chain([row(9, None, 100.0)]).collect();
        let agg = aggregate(&rows);
        let w = agg.iter().find(|a| a.metric == "w_0p").unwrap();
        assert_eq!((w.runs, w.converged), (6, 5));
        let s = w.spread.unwrap();
        assert_eq!((s.median, s.q25, s.q75), (3.0, 2.0, 4.0));
        assert!(agg.iter().find(|a| a.metric == "w_plus").unwrap().spread.is_none());
        assert!(cell_median(&rows, "c", "w_plus").is_err());
    }
}
