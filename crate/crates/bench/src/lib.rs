//! File formats, benchmark runner and command-line surface for the robust
//! MDO benchmark in `umdo_core`.

use std::io;
use std::path::PathBuf;

pub mod cli;
pub mod json;
pub mod problem_file;
pub mod report;
pub mod runner;

pub use problem_file::{digest, ProblemBundle, FORMAT_VERSION};
pub use report::{BenchmarkReport, EstimatorRow, RunRecord};
pub use runner::{run_benchmark, BenchmarkSpec, EstimatorChoice, Scenario, StatisticChoice};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("malformed input {0}")]
    Format(String),

    #[error("unsupported file version {found}, expected {expected}")]
    Version { found: String, expected: u32 },

    #[error("reference problem is infeasible")]
    InfeasibleReference,

    #[error(transparent)]
    Core(#[from] umdo_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl BenchError {
    /// Process exit code: 2 usage, 3 infeasible reference, 4 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) => 2,
            BenchError::InfeasibleReference => 3,
            _ => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| BenchError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
