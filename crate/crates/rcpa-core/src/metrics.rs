//! Per-step metrics records, their CSV serialization, and the summary
//! statistics aggregated across seeds.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a CSV
//! read back with [`read_csv`] reproduces every value bit-exactly and
//! summary statistics are recomputable from the files alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed CSV column order; the header row is mandatory in every file.
pub const CSV_HEADER: &str = "step,strategy,seed,mean_reward,threshold,prefix_ratio,\
cdp_weight_mean,kl_to_ref,kl_consecutive,target_similarity,retention_delta_loglik";

/// One training step's diagnostics. Evaluation columns hold the most recent
/// periodic evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub strategy: String,
    pub seed: u64,
    /// Mean group reward at this step's threshold.
    pub mean_reward: f64,
    /// Pass threshold in force at this step.
    pub threshold: f64,
    /// Forced-prefix fraction k(s) / |y|.
    pub prefix_ratio: f64,
    /// Mean difficulty weight of this step's groups.
    pub cdp_weight_mean: f64,
    /// Mean exact next-token KL to the starting policy over visited contexts.
    pub kl_to_ref: f64,
    /// Mean exact next-token KL to the previous step's policy over visited
    /// contexts.
    pub kl_consecutive: f64,
    /// Last periodic free-sampling similarity on the target train split.
    pub target_similarity: f64,
    /// Last periodic held-out source log-likelihood delta to the starting
    /// policy.
    pub retention_delta_loglik: f64,
}

impl MetricsRecord {
    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.strategy,
            self.seed,
            self.mean_reward,
            self.threshold,
            self.prefix_ratio,
            self.cdp_weight_mean,
            self.kl_to_ref,
            self.kl_consecutive,
            self.target_similarity,
            self.retention_delta_loglik
        );
        s
    }
}

/// Writes a metrics trace as CSV with the mandatory header row.
pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 96 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a metrics CSV produced by [`write_csv`], verifying the header.
pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "{}: bad or missing CSV header {:?}",
                path.display(),
                other.unwrap_or("")
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Config(format!(
                "{} line {}: expected 11 fields, got {}",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        let num = |j: usize| -> Result<f64> {
            fields[j].parse().map_err(|e| {
                Error::Config(format!("{} line {}: field {j}: {e}", path.display(), i + 2))
            })
        };
        records.push(MetricsRecord {
            step: fields[0]
                .parse()
                .map_err(|e| Error::Config(format!("{} line {}: step: {e}", path.display(), i + 2)))?,
            strategy: fields[1].to_string(),
            seed: fields[2]
                .parse()
                .map_err(|e| Error::Config(format!("{} line {}: seed: {e}", path.display(), i + 2)))?,
            mean_reward: num(3)?,
            threshold: num(4)?,
            prefix_ratio: num(5)?,
            cdp_weight_mean: num(6)?,
            kl_to_ref: num(7)?,
            kl_consecutive: num(8)?,
            target_similarity: num(9)?,
            retention_delta_loglik: num(10)?,
        });
    }
    Ok(records)
}

/// Median of a sample; `None` when empty. Even-length samples average the
/// two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 { sorted[mid] } else { (sorted[mid - 1] + sorted[mid]) / 2.0 })
}

/// Population variance of a sample; 0 for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Cross-seed aggregate for one strategy. Medians are over each seed's
/// final record; the variance is of the kl_consecutive column over each
/// trace, averaged across seeds. `None` when every run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub median_final_target_similarity: Option<f64>,
    pub median_final_mean_reward: Option<f64>,
    pub median_final_retention_delta_loglik: Option<f64>,
    pub mean_kl_consecutive_variance: Option<f64>,
    /// Seeds whose runs errored, with the error text; absent when all
    /// succeeded.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<u64, String>,
}

/// Per-strategy summaries keyed by strategy name.
pub type SummaryReport = BTreeMap<String, StrategySummary>;

/// Builds one strategy's summary from its successful traces and failures.
pub fn summarize_strategy(
    traces: &[&[MetricsRecord]],
    failures: BTreeMap<u64, String>,
) -> StrategySummary {
    let finals: Vec<&MetricsRecord> =
        traces.iter().filter_map(|t| t.last()).collect();
    let collect = |f: fn(&MetricsRecord) -> f64| -> Vec<f64> {
        finals.iter().map(|r| f(r)).collect()
    };
    let kl_vars: Vec<f64> = traces
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| variance(&t.iter().map(|r| r.kl_consecutive).collect::<Vec<_>>()))
        .collect();
    StrategySummary {
        median_final_target_similarity: median(&collect(|r| r.target_similarity)),
        median_final_mean_reward: median(&collect(|r| r.mean_reward)),
        median_final_retention_delta_loglik: median(&collect(|r| r.retention_delta_loglik)),
        mean_kl_consecutive_variance: if kl_vars.is_empty() {
            None
        } else {
            Some(kl_vars.iter().sum::<f64>() / kl_vars.len() as f64)
        },
        failures,
    }
}
