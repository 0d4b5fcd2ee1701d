//! The six-class acceptance batch: every suite workload across several
//! seeds, each profiled in a single streaming pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compare::{compare_run, Comparison, ComparisonRow};
use crate::config::RunConfig;
use crate::oracle::OracleReport;
use crate::pipeline::{run_profile, ProfileError};
use crate::profiler::check_breakpoint_log;
use crate::report::ProfileReport;
use crate::workloads::{generate, WorkloadError, WorkloadKind, WorkloadSpec};

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("{kind} seed {seed}: {source}")]
    Workload {
        kind: WorkloadKind,
        seed: u64,
        #[source]
        source: WorkloadError,
    },
    #[error("{kind} seed {seed}: {source}")]
    Profile {
        kind: WorkloadKind,
        seed: u64,
        #[source]
        source: ProfileError,
    },
    #[error("{kind} seed {seed}: {msg}")]
    Compare { kind: WorkloadKind, seed: u64, msg: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteRun {
    pub kind: WorkloadKind,
    pub seed: u64,
    pub report: ProfileReport,
    pub oracle: OracleReport,
    pub row: ComparisonRow,
    /// Breakpoint log violation, if any.
    pub breakpoint_log_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteResult {
    pub runs: Vec<SuiteRun>,
    pub comparison: Comparison,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.comparison.all_matched() && self.runs.iter().all(|r| r.breakpoint_log_error.is_none())
    }
}

/// Generates, profiles and compares one workload. The seed drives both the
/// generator and the sampler.
pub fn run_one(kind: WorkloadKind, seed: u64, base: &RunConfig) -> Result<SuiteRun, SuiteError> {
    let mut cfg = base.clone();
    cfg.sampler.seed = seed;
    let w = generate(&WorkloadSpec::new(kind, seed), &cfg.cache)
        .map_err(|source| SuiteError::Workload { kind, seed, source })?;
    let run = run_profile(w.header, cfg, w.events.map(Ok)).map_err(|source| SuiteError::Profile { kind, seed, source })?;
    let c = run.classify(&run.config.thresholds);
    let report = ProfileReport::new(&run, &c);
    let row = compare_run(&report, &run.oracle).map_err(|e| SuiteError::Compare {
        kind,
        seed,
        msg: e.to_string(),
    })?;
    Ok(SuiteRun {
        kind,
        seed,
        breakpoint_log_error: check_breakpoint_log(&run.breakpoint_log).err(),
        oracle: run.oracle,
        report,
        row,
    })
}

pub fn run_suite(kinds: &[WorkloadKind], seeds: &[u64], base: &RunConfig) -> Result<SuiteResult, SuiteError> {
    let jobs: Vec<(WorkloadKind, u64)> = seeds
        .iter()
        .flat_map(|&s| kinds.iter().map(move |&k| (k, s)))
        .collect();
    let runs: Vec<SuiteRun> = jobs
        .par_iter()
        .map(|&(k, s)| run_one(k, s, base))
        .collect::<Result<_, _>>()?;
    let comparison = Comparison::from_rows(runs.iter().map(|r| r.row.clone()).collect());
    Ok(SuiteResult { runs, comparison })
}
