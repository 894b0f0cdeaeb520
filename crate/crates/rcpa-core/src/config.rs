//! Run configuration: one JSON document describing a full experiment
//! sweep: scenario, optimization hyperparameters, schedules, reward shape,
//! seeds, and output location.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::CurriculumConfig;
use crate::error::{Error, Result};
use crate::optimizer::{Strategy, TrainConfig};
use crate::reward::RewardSpec;
use crate::tasks::ScenarioConfig;

/// Full experiment description. Every field has a default, so `{}` is a
/// valid config; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig<f64>,
    pub curriculum: CurriculumConfig<f64>,
    pub reward: RewardSpec<f64>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Fraction of one pass over the target train split consumed by the
    /// supervised phase of the coldstart strategy.
    pub coldstart_epochs: f64,
    /// Strategies swept by the suite; when absent, just `train.strategy`.
    /// An explicit empty list runs nothing and writes an empty summary.
    pub strategies: Option<Vec<Strategy>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            train: TrainConfig::default(),
            curriculum: CurriculumConfig::default(),
            reward: RewardSpec::default(),
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("runs"),
            coldstart_epochs: 1.0,
            strategies: None,
        }
    }
}

impl RunConfig {
    /// Loads and parses a JSON config. Both I/O and parse failures are
    /// config errors; parse diagnostics include line and column.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// The strategy list the suite will execute.
    pub fn resolved_strategies(&self) -> Vec<Strategy> {
        self.strategies.clone().unwrap_or_else(|| vec![self.train.strategy])
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        self.curriculum.validate()?;
        self.reward.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.coldstart_epochs < 0.0 || !self.coldstart_epochs.is_finite() {
            return Err(Error::Config(format!(
                "coldstart_epochs must be finite and >= 0, got {}",
                self.coldstart_epochs
            )));
        }
        Ok(())
    }
}
