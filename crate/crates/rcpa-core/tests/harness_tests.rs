//! Training loop, metrics plumbing, suite runner, and run configuration.

use approx::assert_abs_diff_eq;
use rcpa_core::metrics::{self, median, read_csv, summarize_strategy, variance, write_csv};
use rcpa_core::{
    build_scenario, run_suite, run_suite_full, train_run, MetricsRecord, RunConfig, Strategy,
    CSV_HEADER,
};
use std::collections::BTreeMap;
use std::path::Path;

fn record(step: usize, mean_reward: f64) -> MetricsRecord {
    MetricsRecord {
        step,
        strategy: "rcpa".to_string(),
        seed: 3,
        mean_reward,
        threshold: 0.7125,
        prefix_ratio: 0.8333333333333334,
        cdp_weight_mean: 2.0,
        kl_to_ref: 1.25e-3,
        kl_consecutive: -0.0,
        target_similarity: 0.5,
        retention_delta_loglik: -0.0123,
    }
}

/// Shrunken scenario and schedule so a full run takes well under a second.
fn small_run_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scenario.source_corpus_size = 400;
    cfg.scenario.target_train_size = 32;
    cfg.scenario.target_test_size = 8;
    cfg.curriculum.total_steps = 64;
    cfg.train.group_size = 8;
    cfg.seeds = vec![0];
    cfg.output_dir = dir.to_path_buf();
    cfg
}

// ---------------------------------------------------------------------------
// Metrics records and CSV
// ---------------------------------------------------------------------------

#[test]
fn csv_line_matches_the_header_layout() {
    let header_cols = CSV_HEADER.split(',').count();
    let line = record(7, -0.25).csv_line();
    assert_eq!(line.split(',').count(), header_cols);
    assert!(line.starts_with("7,rcpa,3,-0.25,"));
}

#[test]
fn csv_round_trip_preserves_records_exactly() {
    let records = vec![record(0, -1.0), record(1, 1.0 / 3.0), record(2, f64::MIN_POSITIVE)];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_csv(&path, &records).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    assert_eq!(read_csv(&path).unwrap(), records);
}

#[test]
fn csv_reader_rejects_mangled_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, format!("{CSV_HEADER}\n1,rcpa,0,not_a_number\n")).unwrap();
    assert!(read_csv(&path).is_err());
    std::fs::write(&path, "wrong,header\n").unwrap();
    assert!(read_csv(&path).is_err());
}

#[test]
fn median_and_variance_oracles() {
    assert_eq!(median(&[]), None);
    assert_eq!(median(&[4.0]), Some(4.0));
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    assert_eq!(variance(&[5.0, 5.0, 5.0]), 0.0);
    assert_abs_diff_eq!(variance(&[1.0, 2.0, 3.0]), 2.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn strategy_summary_takes_medians_over_final_records() {
    let mut a = vec![record(0, 0.0), record(1, 0.1)];
    let mut b = vec![record(0, 0.0), record(1, 0.5)];
    let mut c = vec![record(0, 0.0), record(1, 0.9)];
    for (trace, sim) in [(&mut a, 0.2), (&mut b, 0.4), (&mut c, 0.6)] {
        trace.last_mut().unwrap().target_similarity = sim;
    }
    a[0].kl_consecutive = 2.0;
    a[1].kl_consecutive = 4.0;

    let mut failures = BTreeMap::new();
    failures.insert(9u64, "boom".to_string());
    let summary = summarize_strategy(&[&a, &b, &c], failures.clone());
    assert_eq!(summary.median_final_mean_reward, Some(0.5));
    assert_eq!(summary.median_final_target_similarity, Some(0.4));
    // Traces b and c have constant kl_consecutive (variance 0); trace a has
    // values {2, 4} with population variance 1.
    assert_abs_diff_eq!(summary.mean_kl_consecutive_variance.unwrap(), 1.0 / 3.0, epsilon = 1e-12);
    assert_eq!(summary.failures, failures);

    let empty = summarize_strategy(&[], BTreeMap::new());
    assert_eq!(empty.median_final_mean_reward, None);
    assert_eq!(empty.mean_kl_consecutive_variance, None);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[test]
fn train_run_emits_one_record_per_step_with_the_scheduled_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path());
    let scenario = build_scenario(&cfg.scenario).unwrap();
    let (_, records) = train_run(&cfg, &scenario, Strategy::Rcpa, 0).unwrap();
    assert_eq!(records.len(), cfg.curriculum.total_steps);
    for (i, rec) in records.iter().enumerate() {
        assert_eq!(rec.step, i);
        assert_eq!(rec.strategy, "rcpa");
        assert_eq!(rec.seed, 0);
        assert!((cfg.curriculum.delta_min..=cfg.curriculum.delta_max).contains(&rec.threshold));
        assert!((0.0..=1.0).contains(&rec.prefix_ratio));
        assert!(rec.cdp_weight_mean > 0.0);
        assert!(rec.mean_reward.abs() <= 1.0 + 1e-12);
    }
    assert_eq!(records[0].prefix_ratio, 1.0);
    assert_eq!(records.last().unwrap().prefix_ratio, 0.0);
    for pair in records.windows(2) {
        assert!(pair[1].threshold >= pair[0].threshold);
        assert!(pair[1].prefix_ratio <= pair[0].prefix_ratio);
    }
}

#[test]
fn train_run_is_deterministic_per_seed_and_varies_across_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path());
    let scenario = build_scenario(&cfg.scenario).unwrap();
    let (policy_a, records_a) = train_run(&cfg, &scenario, Strategy::Grpon, 0).unwrap();
    let (policy_b, records_b) = train_run(&cfg, &scenario, Strategy::Grpon, 0).unwrap();
    assert_eq!(records_a, records_b);
    assert_eq!(policy_a.to_json_string().unwrap(), policy_b.to_json_string().unwrap());

    let (_, records_c) = train_run(&cfg, &scenario, Strategy::Grpon, 1).unwrap();
    assert_ne!(records_a, records_c);
}

#[test]
fn supervised_run_with_zero_learning_rate_never_moves_the_policy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run_config(dir.path());
    cfg.train.sft_learning_rate = 0.0;
    let scenario = build_scenario(&cfg.scenario).unwrap();
    let (theta, _) = train_run(&cfg, &scenario, Strategy::Sft, 0).unwrap();
    assert_eq!(
        theta.to_json_string().unwrap(),
        scenario.pre.to_json_string().unwrap()
    );
}

#[test]
fn train_run_rejects_an_invalid_config_before_doing_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run_config(dir.path());
    cfg.train.clip_eps = 2.0;
    let scenario = build_scenario(&cfg.scenario).unwrap();
    let err = train_run(&cfg, &scenario, Strategy::Rcpa, 0).unwrap_err();
    assert!(err.to_string().contains("config"), "unexpected error: {err}");
}

// ---------------------------------------------------------------------------
// Suite runner
// ---------------------------------------------------------------------------

#[test]
fn run_suite_full_writes_every_artifact_and_returns_matching_payloads() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run_config(dir.path());
    cfg.seeds = vec![0, 1];
    cfg.strategies = Some(vec![Strategy::Sft]);
    let (summary, results) = run_suite_full(&cfg).unwrap();

    for name in ["dataset_train.jsonl", "dataset_test.jsonl", "sft_0.csv", "sft_1.csv", "summary.json"] {
        assert!(dir.path().join(name).exists(), "missing artifact {name}");
    }
    assert_eq!(results.len(), 2);
    for result in &results {
        assert_eq!(result.strategy, Strategy::Sft);
        assert!(result.policy.is_some());
        assert!(result.error.is_none());
        assert_eq!(result.records.len(), cfg.curriculum.total_steps);
        let on_disk = read_csv(&dir.path().join(format!("sft_{}.csv", result.seed))).unwrap();
        assert_eq!(on_disk, result.records);
    }
    let sft = &summary["sft"];
    assert!(sft.failures.is_empty());
    assert!(sft.median_final_mean_reward.is_some());
    assert!(sft.median_final_target_similarity.is_some());
    assert!(sft.median_final_retention_delta_loglik.is_some());

    // The written summary parses back to the returned one.
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let parsed: metrics::SummaryReport = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, summary);
}

#[test]
fn an_explicit_empty_strategy_list_runs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run_config(dir.path());
    cfg.strategies = Some(Vec::new());
    let summary = run_suite(&cfg).unwrap();
    assert!(summary.is_empty());
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert_eq!(text.trim(), "{}");
}

#[test]
fn suite_reruns_are_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut cfg_a = small_run_config(dir_a.path());
    cfg_a.strategies = Some(vec![Strategy::Rcpa]);
    let mut cfg_b = cfg_a.clone();
    cfg_b.output_dir = dir_b.path().to_path_buf();
    run_suite(&cfg_a).unwrap();
    run_suite(&cfg_b).unwrap();
    for name in ["rcpa_0.csv", "summary.json", "dataset_train.jsonl"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[test]
fn run_config_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    let cfg = small_run_config(dir.path());
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let loaded = RunConfig::load(&path).unwrap();
    assert_eq!(loaded, cfg);
}

#[test]
fn an_empty_object_loads_the_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    std::fs::write(&path, "{}").unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
}

#[test]
fn config_parse_failures_name_the_file_and_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\n  \"seeds\": [0,\n}").unwrap();
    let err = RunConfig::load(&path).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("broken.json"), "missing path in: {text}");
    assert!(text.contains("line"), "missing position in: {text}");
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("extra.json");
    std::fs::write(&path, "{\"learning_rate\": 0.5}").unwrap();
    assert!(RunConfig::load(&path).is_err());
}

#[test]
fn resolved_strategies_fall_back_to_the_training_strategy() {
    let mut cfg = RunConfig { strategies: None, ..RunConfig::default() };
    cfg.train.strategy = Strategy::Cfft;
    assert_eq!(cfg.resolved_strategies(), vec![Strategy::Cfft]);
    cfg.strategies = Some(vec![Strategy::Rcpa, Strategy::Sft]);
    assert_eq!(cfg.resolved_strategies(), vec![Strategy::Rcpa, Strategy::Sft]);
}
