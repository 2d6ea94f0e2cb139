//! Experiment suites, record files and aggregation for churn-lab.

pub mod analyze;
pub mod overrides;
pub mod perstate;
pub mod records;
pub mod run;
pub mod stats;
pub mod suites;
pub mod units;

use std::path::PathBuf;

use thiserror::Error;

pub use analyze::{analyze_dir, AnalyzeReport};
pub use overrides::{apply_override, OverrideValue};
pub use records::{summarize, SummaryRow, TraceFile};
pub use run::{run_cells, run_suite, RunReport};
pub use suites::{suite, Cell, CellKind, Suite};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    #[error("{0}")]
    Empty(String),

    #[error("{0}")]
    Invalid(String),

    #[error("override `{key}`: {reason}")]
    Override { key: String, reason: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] churn_lab::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
