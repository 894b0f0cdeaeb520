//! Multi-seed, multi-strategy experiment sweeps.
//!
//! The suite builds the scenario once, fans (strategy, seed) jobs out over
//! a small worker pool, writes one metrics CSV per run plus the datasets
//! and a cross-seed summary, and never lets one failed run abort the rest.
//! Parallelism is opt-in via the `RCPA_LAB_THREADS` environment variable;
//! without it everything runs on the calling thread. Outputs are
//! byte-identical across re-runs of the same config regardless of thread
//! count.

use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{summarize_strategy, write_csv, MetricsRecord, SummaryReport};
use crate::optimizer::Strategy;
use crate::policy::Policy;
use crate::tasks::{build_scenario, Scenario};
use crate::trainer::train_run;

/// Environment variable capping suite parallelism; absent means serial.
pub const THREADS_ENV_VAR: &str = "RCPA_LAB_THREADS";

/// Outcome of one (strategy, seed) run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub strategy: Strategy,
    pub seed: u64,
    /// Final policy; `None` when the run failed.
    pub policy: Option<Policy<f64>>,
    pub records: Vec<MetricsRecord>,
    pub error: Option<String>,
}

fn worker_thread_count(n_jobs: usize) -> Result<usize> {
    match std::env::var(THREADS_ENV_VAR) {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(Error::Config(format!("{THREADS_ENV_VAR}: {e}"))),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n.min(n_jobs.max(1))),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV_VAR} must be a positive integer, got {raw:?}"
            ))),
        },
    }
}

fn run_one(cfg: &RunConfig, scenario: &Scenario, strategy: Strategy, seed: u64) -> RunResult {
    let outcome = catch_unwind(AssertUnwindSafe(|| train_run(cfg, scenario, strategy, seed)));
    match outcome {
        Ok(Ok((policy, records))) => {
            RunResult { strategy, seed, policy: Some(policy), records, error: None }
        }
        Ok(Err(e)) => {
            RunResult { strategy, seed, policy: None, records: Vec::new(), error: Some(e.to_string()) }
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            RunResult { strategy, seed, policy: None, records: Vec::new(), error: Some(msg) }
        }
    }
}

fn csv_path(dir: &Path, strategy: Strategy, seed: u64) -> std::path::PathBuf {
    dir.join(format!("{strategy}_{seed}.csv"))
}

/// Runs every configured strategy x seed, writes per-run CSVs, the dataset
/// files, and `summary.json`; returns the summary plus every run's records
/// and final policy. Individual run failures are recorded in the summary
/// and the sweep continues.
pub fn run_suite_full(cfg: &RunConfig) -> Result<(SummaryReport, Vec<RunResult>)> {
    cfg.validate()?;
    let strategies = cfg.resolved_strategies();
    let jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&st| cfg.seeds.iter().map(move |&seed| (st, seed)))
        .collect();
    let threads = worker_thread_count(jobs.len())?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    let scenario = build_scenario(&cfg.scenario)?;
    scenario.train.save_jsonl(&cfg.output_dir.join("dataset_train.jsonl"))?;
    scenario.test.save_jsonl(&cfg.output_dir.join("dataset_test.jsonl"))?;

    let mut results: Vec<RunResult> = if threads <= 1 {
        jobs.iter().map(|&(st, seed)| run_one(cfg, &scenario, st, seed)).collect()
    } else {
        let queue = Mutex::new(jobs.iter().copied().collect::<VecDeque<_>>());
        let collected = Mutex::new(Vec::with_capacity(jobs.len()));
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let job = queue.lock().expect("queue lock").pop_front();
                    let Some((st, seed)) = job else { break };
                    let result = run_one(cfg, &scenario, st, seed);
                    collected.lock().expect("results lock").push(result);
                });
            }
        });
        collected.into_inner().expect("results lock")
    };
    results.sort_by_key(|r| (r.strategy, r.seed));

    for result in &results {
        if result.error.is_none() {
            write_csv(&csv_path(&cfg.output_dir, result.strategy, result.seed), &result.records)?;
        }
    }

    let mut summary = SummaryReport::new();
    for &st in &strategies {
        let runs: Vec<&RunResult> = results.iter().filter(|r| r.strategy == st).collect();
        let traces: Vec<&[MetricsRecord]> =
            runs.iter().filter(|r| r.error.is_none()).map(|r| r.records.as_slice()).collect();
        let failures: BTreeMap<u64, String> = runs
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| (r.seed, e.clone())))
            .collect();
        summary.insert(st.as_str().to_string(), summarize_strategy(&traces, failures));
    }
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(cfg.output_dir.join("summary.json"), text)?;
    Ok((summary, results))
}

/// [`run_suite_full`] without the per-run payload.
pub fn run_suite(cfg: &RunConfig) -> Result<SummaryReport> {
    run_suite_full(cfg).map(|(summary, _)| summary)
}
