use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::Value;

use churn_harness::overrides::apply_overrides;
use churn_harness::suites::{all_suites, suite, CATCH};
use churn_harness::{analyze_dir, run_cells, Cell, CellKind, HarnessError, OverrideValue, RunReport};
use churn_lab::learners::Variant;

/// Policy churn experiments on toy MDPs.
#[derive(Debug, Parser)]
#[command(name = "churn-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print every suite cell with its settings.
    List,
    /// Run a built-in suite or a JSON run configuration.
    Run(RunArgs),
    /// Rebuild summaries from traces and check them against existing ones.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        suite: Option<String>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    suite: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds `0..N`.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel units; `CHURN_LAB_WORKERS` takes precedence.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigDocument {
    suite: Option<String>,
    variant: String,
    seeds: Option<u64>,
    #[serde(default)]
    overrides: serde_json::Map<String, Value>,
    out_dir: Option<PathBuf>,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::UnknownSuite(_) | HarnessError::Override { .. } | HarnessError::Invalid(_) | HarnessError::Empty(_) => {
                Failure::Validation(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

const DEFAULT_SEEDS: u64 = 1;
const DEFAULT_OUT: &str = "results";

fn to_override(key: &str, v: &Value) -> Result<OverrideValue, Failure> {
    Ok(match v {
        Value::Null => OverrideValue::Null,
        Value::Bool(b) => OverrideValue::Bool(*b),
        Value::Number(n) => match n.as_i64() {
            Some(i) => OverrideValue::Int(i),
            None => OverrideValue::Float(n.as_f64().ok_or_else(|| Failure::Validation(format!("override `{key}`: bad number")))?),
        },
        Value::String(s) => OverrideValue::Str(s.clone()),
        Value::Array(items) => OverrideValue::List(items.iter().map(|i| to_override(key, i)).collect::<Result<_, _>>()?),
        Value::Object(_) => return Err(Failure::Validation(format!("override `{key}`: nested objects are not allowed"))),
    })
}

fn workers(flag: Option<usize>, seeds: u64) -> Result<usize, Failure> {
    if let Ok(v) = std::env::var("CHURN_LAB_WORKERS") {
        return match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure::Validation(format!("CHURN_LAB_WORKERS must be a positive integer, got `{v}`"))),
        };
    }
    match flag {
        Some(0) => Err(Failure::Validation("--workers must be positive".into())),
        Some(n) => Ok(n),
        None => {
            let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
            Ok(cpus.min(seeds.max(1) as usize))
        }
    }
}

/// Suite id, cells, seed count and output directory from a config document.
type Loaded = (String, Vec<Cell>, Option<u64>, Option<PathBuf>);

fn load_config(path: &Path) -> Result<Loaded, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Failure::Validation(format!("config not found: {}", path.display())),
        _ => Failure::Runtime(format!("{}: {e}", path.display())),
    })?;
    let doc: RunConfigDocument =
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    let (suite_id, mut cell) = match &doc.suite {
        Some(id) => {
            let s = suite(id)?;
            (s.id.clone(), s.cell(&doc.variant)?.clone())
        }
        None => {
            let v = Variant::from_tag(&doc.variant)
                .ok_or_else(|| Failure::Validation(format!("variant: unknown variant `{}`", doc.variant)))?;
            ("custom".to_string(), Cell { label: v.tag().to_string(), kind: CellKind::Learner { env: CATCH, config: v.config() } })
        }
    };
    let values: Vec<(String, OverrideValue)> =
        doc.overrides.iter().map(|(k, v)| Ok((k.clone(), to_override(k, v)?))).collect::<Result<_, Failure>>()?;
    match &mut cell.kind {
        CellKind::Learner { config, .. } => apply_overrides(config, values.iter().map(|(k, v)| (k.as_str(), v)))?,
        _ if !values.is_empty() => {
            return Err(Failure::Validation(format!("overrides: cell `{}` is not a learner", cell.label)));
        }
        _ => {}
    }
    Ok((suite_id, vec![cell], doc.seeds, doc.out_dir))
}

fn report_run(report: &RunReport, workers: usize) -> Result<(), Failure> {
    let converged = report.summary.iter().filter(|r| r.converged()).count();
    println!(
        "{}: {} runs written ({} converged) on {} worker(s)",
        report.suite_dir.display(),
        report.summary.len(),
        converged,
        workers
    );
    for f in &report.failures {
        eprintln!("failed {}/{}: {}", f.cell, f.seed, f.message);
    }
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{} unit(s) failed; see error.txt in their run directories", report.failures.len())))
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let (suite_id, cells, cfg_seeds, cfg_out) = match (&args.suite, &args.config) {
        (Some(id), None) => {
            let s = suite(id)?;
            (s.id, s.cells, None, None)
        }
        (None, Some(path)) => load_config(path)?,
        _ => return Err(Failure::Validation("give exactly one of --suite or --config".into())),
    };
    let seeds = args.seeds.or(cfg_seeds).unwrap_or(DEFAULT_SEEDS);
    if seeds == 0 {
        return Err(Failure::Validation("--seeds must be at least 1".into()));
    }
    let out = args.out.or(cfg_out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let workers = workers(args.workers, seeds)?;
    let report = run_cells(&suite_id, &cells, seeds, &out, workers).map_err(|e| match e {
        HarnessError::Io { .. } => Failure::Runtime(e.to_string()),
        other => Failure::from(other),
    })?;
    report_run(&report, workers)
}

fn list() -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    for s in all_suites() {
        for c in &s.cells {
            let params: Vec<String> = c.params().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
            match writeln!(out, "{}\t{}\t{}", s.id, c.label, params.join(",")) {
                Ok(()) => {}
                // A closed pipe (`| head`) is not an error.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
                Err(e) => return Err(Failure::Runtime(e.to_string())),
            }
        }
    }
    Ok(())
}

fn analyze(input: &Path, only: Option<&str>) -> Result<(), Failure> {
    let report = analyze_dir(input, only)?;
    let mut problems = 0;
    for s in &report.suites {
        println!("{}: {} runs re-derived", s.suite, s.runs);
        for p in &s.problems {
            eprintln!("inconsistent {}: {p}", s.suite);
        }
        problems += s.problems.len();
    }
    if problems > 0 {
        return Err(Failure::Runtime(format!("{problems} inconsistent or unreadable record(s)")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::List => list(),
        Command::Run(args) => run(args),
        Command::Analyze { input, suite } => analyze(&input, suite.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
