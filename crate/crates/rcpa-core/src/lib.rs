//! Desk-scale laboratory for curriculum-scheduled group-relative policy
//! optimization on exactly differentiable tabular token policies.
//!
//! The lab studies a post-training question in miniature: adapting a
//! pre-trained policy to a sparse-reward target domain without destroying
//! its general competence. All policies are order-m tabular softmax models
//! ([`policy`]), so every objective here has a closed-form value and an
//! exact analytic gradient that tests check against finite differences.
//!
//! * [`reward`]: composite similarity scoring and strict-threshold binary
//!   rewards over token sequences.
//! * [`curriculum`]: the forced-prefix length k(s), the ramping pass
//!   threshold delta(s), and the difficulty weight 1/(offset + mean reward).
//! * [`optimizer`]: values and gradients for the supervised, KL-anchored,
//!   and clipped group-relative objectives, plus plain gradient ascent.
//! * [`tasks`]: deterministic synthetic scenarios: a seeded source
//!   distribution to pre-train on, a key-value target dataset the starting
//!   policy cannot answer by luck, and target/retention evaluation.
//! * [`trainer`] / [`suite`]: the per-step training loop for each
//!   strategy and the multi-seed sweep with CSV metrics and a JSON summary.
//!
//! Numeric code is generic over [`Real`] (f64 or f32); the `*64` aliases
//! below fix f64 for everyday use. Everything is deterministic given
//! (config, seed): reruns reproduce output files byte for byte.

pub mod config;
pub mod curriculum;
pub mod error;
pub mod metrics;
pub mod optimizer;
pub mod policy;
pub mod reward;
pub mod scalar;
pub mod suite;
pub mod tasks;
pub mod trainer;

pub use config::RunConfig;
pub use curriculum::{difficulty_weight, CurriculumConfig, CurriculumState};
pub use error::{Error, Result};
pub use metrics::{MetricsRecord, StrategySummary, SummaryReport, CSV_HEADER};
pub use optimizer::{
    ascend, cfft_loss, clipped_term, grpo_objective, importance_ratio, kl_penalty_estimate,
    rcpa_objective, sft_loss, standardized_advantages, ResponseGroup, Strategy, TrainConfig,
    Trajectory,
};
pub use policy::{ParamGradient, Policy, Token, Vocabulary};
pub use reward::{
    binary_reward, composite_similarity, score_response, sim_entity_toy, sim_factual_toy,
    sim_semantic_toy, RewardSpec, SimilarityBackend, SimilarityTriple,
};
pub use scalar::Real;
pub use suite::{run_suite, run_suite_full, RunResult};
pub use tasks::{
    build_scenario, eval_retention, eval_target, gen_source_corpus, gen_target_dataset,
    held_out_source, Dataset, DatasetItem, Scenario, ScenarioConfig, SourceModel, Split,
};
pub use trainer::{train_baseline, train_rcpa, train_run};

/// Everyday concrete types at f64 precision.
pub type Policy64 = policy::Policy<f64>;
pub type ParamGradient64 = policy::ParamGradient<f64>;
pub type RewardSpec64 = reward::RewardSpec<f64>;
pub type CurriculumConfig64 = curriculum::CurriculumConfig<f64>;
pub type CurriculumState64 = curriculum::CurriculumState<f64>;
pub type TrainConfig64 = optimizer::TrainConfig<f64>;
pub type Trajectory64 = optimizer::Trajectory<f64>;
pub type ResponseGroup64 = optimizer::ResponseGroup<f64>;
