//! Parallel execution of suites and the post-pass that writes suite files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::perstate::{average_maps, bucket_per_state, catch_annotation, write_perstate, PerStateRow};
use crate::records::{aggregate, schema_text, summarize, write_aggregate, write_summary, write_switches, write_text, SummaryRow, TraceFile};
use crate::suites::{suite_note, CATCH};
use crate::units::{execute, learner_task, UnitOutput};
use crate::{io_err, Cell, HarnessError, Result, Suite};

/// A unit that raised an error; its message is also in `error.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitFailure {
    pub cell: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub suite_dir: PathBuf,
    pub summary: Vec<SummaryRow>,
    pub perstate: Option<Vec<PerStateRow>>,
    pub failures: Vec<UnitFailure>,
}

pub fn run_dir(suite_dir: &Path, cell: &str, seed: u64) -> PathBuf {
    suite_dir.join(cell).join(seed.to_string())
}

/// Runs every `(cell, seed)` of `suite` for seeds `0..seeds` on `workers`
/// threads and writes `<out>/<suite>/...`.
pub fn run_suite(suite: &Suite, seeds: u64, out: &Path, workers: usize) -> Result<RunReport> {
    run_cells(&suite.id, &suite.cells, seeds, out, workers)
}

pub fn run_cells(suite_id: &str, cells: &[Cell], seeds: u64, out: &Path, workers: usize) -> Result<RunReport> {
    if seeds == 0 {
        return Err(HarnessError::Invalid("need at least one seed".into()));
    }
    let suite_dir = out.join(suite_id);
    fs::create_dir_all(&suite_dir).map_err(io_err(&suite_dir))?;
    let units: Vec<(&Cell, u64)> = cells.iter().flat_map(|c| (0..seeds).map(move |s| (c, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<UnitOutput>> = pool.install(|| {
        units
            .par_iter()
            .map(|&(cell, seed)| {
                let dir = run_dir(&suite_dir, &cell.label, seed);
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let error_path = dir.join("error.txt");
                match execute(suite_id, cell, seed).and_then(|o| write_unit(&dir, &o).map(|_| o)) {
                    Ok(o) => {
                        if error_path.exists() {
                            fs::remove_file(&error_path).map_err(io_err(&error_path))?;
                        }
                        Ok(o)
                    }
                    Err(e) => {
                        write_text(&error_path, &format!("{e}\n"))?;
                        Err(e)
                    }
                }
            })
            .collect()
    });
    let mut outputs = Vec::new();
    let mut failures = Vec::new();
    for ((cell, seed), r) in units.iter().zip(results) {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => failures.push(UnitFailure { cell: cell.label.clone(), seed: *seed, message: e.to_string() }),
        }
    }
    let (summary, perstate) = write_suite_files(&suite_dir, suite_id, &outputs)?;
    Ok(RunReport { suite_dir, summary, perstate, failures })
}

fn write_unit(dir: &Path, out: &UnitOutput) -> Result<()> {
    out.trace.write(&dir.join("trace.csv"))?;
    if let Some(events) = &out.switches {
        write_switches(&dir.join("switches.csv"), events)?;
    }
    Ok(())
}

/// Writes `summary.csv`, `aggregate.csv`, `schema.txt` and, when any run
/// carries switch events, `perstate.csv`.
pub(crate) fn write_suite_files(
    suite_dir: &Path,
    suite_id: &str,
    outputs: &[UnitOutput],
) -> Result<(Vec<SummaryRow>, Option<Vec<PerStateRow>>)> {
    let summary: Vec<SummaryRow> = outputs.iter().map(|o| summarize(&o.trace)).collect::<Result<_>>()?;
    write_summary(&suite_dir.join("summary.csv"), &summary, suite_note(suite_id))?;
    write_aggregate(&suite_dir.join("aggregate.csv"), &aggregate(&summary))?;
    write_text(&suite_dir.join("schema.txt"), &schema_text())?;
    let perstate = if outputs.iter().any(|o| o.switches.is_some()) {
        Some(perstate_rows(suite_dir, outputs)?)
    } else {
        None
    };
    Ok((summary, perstate))
}

fn perstate_rows(suite_dir: &Path, outputs: &[UnitOutput]) -> Result<Vec<PerStateRow>> {
    let task = learner_task(CATCH, 0)?;
    let n = task.mdp.num_states();
    let maps: Vec<_> = outputs
        .iter()
        .filter(|o| o.trace.p.is_some())
        .filter_map(|o| o.switches.as_ref().map(|sw| bucket_per_state(sw, o.trace.p, o.trace.rows.len(), n)))
        .collect::<Result<_>>()?;
    let rows = average_maps(&maps, &task)?;
    let crate::suites::Env::Catch { rows: r, cols: c } = CATCH else { unreachable!("per-state maps use Catch") };
    write_perstate(&suite_dir.join("perstate.csv"), &rows, &catch_annotation(r, c)?)?;
    Ok(rows)
}

/// Loads a written unit back from disk.
pub fn load_unit(dir: &Path) -> Result<UnitOutput> {
    let trace = TraceFile::read(&dir.join("trace.csv"))?;
    let sw = dir.join("switches.csv");
    let switches = if sw.exists() { Some(crate::records::read_switches(&sw)?) } else { None };
    Ok(UnitOutput { trace, switches })
}
