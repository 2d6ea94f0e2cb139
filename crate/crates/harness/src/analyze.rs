//! Regenerates suite files from traces and cross-checks them against the
//! summaries already on disk.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::records::{read_summary, summarize, SummaryRow};
use crate::run::{load_unit, write_suite_files};
use crate::suites::{suite, SUITE_IDS};
use crate::units::UnitOutput;
use crate::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteAnalysis {
    pub suite: String,
    pub runs: usize,
    /// One message per trace that could not be read or disagrees with the
    /// existing summary.
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalyzeReport {
    pub suites: Vec<SuiteAnalysis>,
}

impl AnalyzeReport {
    pub fn is_clean(&self) -> bool {
        self.suites.iter().all(|s| s.problems.is_empty())
    }
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `(cell, seed, dir)` of every run directory holding a trace.
fn find_runs(suite_dir: &Path) -> Result<Vec<(String, u64, PathBuf)>> {
    let mut runs = Vec::new();
    for cell_dir in subdirs(suite_dir)? {
        for seed_dir in subdirs(&cell_dir)? {
            if let Ok(seed) = name(&seed_dir).parse::<u64>() {
                if seed_dir.join("trace.csv").exists() {
                    runs.push((name(&cell_dir), seed, seed_dir));
                }
            }
        }
    }
    Ok(runs)
}

/// Orders runs as the runner does: built-in cell order (or the order of an
/// existing summary), then by seed.
fn order_runs(suite_id: &str, runs: &mut [(String, u64, PathBuf)], existing: &[SummaryRow]) {
    let mut rank: HashMap<String, usize> = HashMap::new();
    if let Ok(s) = suite(suite_id) {
        for (i, c) in s.cells.iter().enumerate() {
            rank.insert(c.label.clone(), i);
        }
    }
    for r in existing {
        let next = rank.len();
        rank.entry(r.cell.clone()).or_insert(next);
    }
    runs.sort_by(|a, b| {
        let ra = rank.get(&a.0).copied().unwrap_or(usize::MAX);
        let rb = rank.get(&b.0).copied().unwrap_or(usize::MAX);
        (ra, &a.0, a.1).cmp(&(rb, &b.0, b.1))
    });
}

fn compare(old: &SummaryRow, new: &SummaryRow) -> Option<String> {
    let run = format!("{}/{}", new.cell, new.seed);
    let same = |a: Option<f64>, b: Option<f64>| a.map(f64::to_bits) == b.map(f64::to_bits);
    if old.p != new.p {
        return Some(format!("{run}: summary p {:?} but trace gives {:?}", old.p, new.p));
    }
    if !same(Some(old.w_0p), Some(new.w_0p)) {
        return Some(format!("{run}: summary w_0p {} but trace folds to {}", old.w_0p, new.w_0p));
    }
    if !same(old.w_plus, new.w_plus) || !same(old.mean_gap, new.mean_gap) {
        return Some(format!("{run}: summary w_plus/mean_gap disagree with trace"));
    }
    None
}

fn analyze_suite(suite_dir: &Path) -> Result<Option<SuiteAnalysis>> {
    let suite_id = name(suite_dir);
    let mut runs = find_runs(suite_dir)?;
    if runs.is_empty() {
        return Ok(None);
    }
    let summary_path = suite_dir.join("summary.csv");
    let mut problems = Vec::new();
    let existing = if summary_path.exists() {
        read_summary(&summary_path).unwrap_or_else(|e| {
            problems.push(e.to_string());
            Vec::new()
        })
    } else {
        Vec::new()
    };
    order_runs(&suite_id, &mut runs, &existing);
    let mut outputs: Vec<UnitOutput> = Vec::new();
    for (cell, seed, dir) in &runs {
        let unit = match load_unit(dir) {
            Ok(u) => u,
            Err(e) => {
                problems.push(format!("{cell}/{seed}: {e}"));
                continue;
            }
        };
        match summarize(&unit.trace) {
            Ok(fresh) => {
                match existing.iter().find(|r| &r.cell == cell && r.seed == *seed) {
                    Some(old) => problems.extend(compare(old, &fresh)),
                    None if !existing.is_empty() => problems.push(format!("{cell}/{seed}: run missing from summary")),
                    None => {}
                }
                outputs.push(unit);
            }
            Err(e) => problems.push(format!("{cell}/{seed}: {e}")),
        }
    }
    for old in &existing {
        if !runs.iter().any(|(c, s, _)| c == &old.cell && *s == old.seed) {
            problems.push(format!("{}/{}: summary row without a trace", old.cell, old.seed));
        }
    }
    write_suite_files(suite_dir, &suite_id, &outputs)?;
    Ok(Some(SuiteAnalysis { suite: suite_id, runs: outputs.len(), problems }))
}

/// Re-derives every suite under `dir` (or only `only`), rewriting
/// `summary.csv`, `aggregate.csv` and, where switch events exist,
/// `perstate.csv`. `dir` may also be a single suite directory.
pub fn analyze_dir(dir: &Path, only: Option<&str>) -> Result<AnalyzeReport> {
    if !dir.is_dir() {
        return Err(HarnessError::Empty(format!("no traces found: {} is not a directory", dir.display())));
    }
    let mut candidates = match only {
        Some(s) => vec![dir.join(s)],
        None => subdirs(dir)?,
    };
    if only.is_none() && (SUITE_IDS.contains(&name(dir).as_str()) || dir.join("summary.csv").exists()) {
        candidates = vec![dir.to_path_buf()];
    }
    let mut report = AnalyzeReport::default();
    for suite_dir in candidates.iter().filter(|d| d.is_dir()) {
        if let Some(a) = analyze_suite(suite_dir)? {
            report.suites.push(a);
        }
    }
    if report.suites.is_empty() {
        return Err(HarnessError::Empty(format!("no traces found under {}", dir.display())));
    }
    Ok(report)
}
