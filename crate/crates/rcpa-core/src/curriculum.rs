//! Prefix, threshold, and difficulty schedules for curriculum training.
//!
//! With s the current step, S the total step budget, and sigma the pacing
//! parameter, the run splits into a pre-alignment phase (s < S/sigma) and a
//! reinforcement phase (the rest). During pre-alignment a shrinking prefix of
//! the reference answer is force-fed to the policy,
//!
//!   k(s) = floor( max(0, 1 - (s/S) * sigma) * |y| ),
//!
//! while the pass threshold ramps linearly and then holds,
//!
//!   delta(s) = delta_min + (delta_max - delta_min) * min(1, (s/S) * sigma).
//!
//! Independently, groups are reweighted toward hard prompts by
//!
//!   w = 1 / (offset + mean_reward),
//!
//! strictly decreasing in the group's mean reward; offset > 1 keeps w finite
//! and positive for mean rewards in [-1, +1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Schedule parameters: step budget, pacing, threshold ramp, and the
/// difficulty-weight offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound = "F: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct CurriculumConfig<F> {
    /// Total training steps S.
    pub total_steps: usize,
    /// Pacing parameter sigma; the pre-alignment phase covers the first
    /// 1/sigma fraction of steps.
    pub sigma: F,
    /// Threshold at s = 0.
    pub delta_min: F,
    /// Threshold from s >= S/sigma on.
    pub delta_max: F,
    /// Difficulty-weight offset; must stay > 1.
    pub offset: F,
}

impl<F: Real> Default for CurriculumConfig<F> {
    fn default() -> Self {
        Self {
            total_steps: 1600,
            sigma: F::cast(16.0),
            delta_min: F::cast(0.7),
            delta_max: F::cast(0.8),
            offset: F::cast(1.5),
        }
    }
}

impl<F: Real> CurriculumConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 1 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if self.sigma <= F::zero() || self.sigma.is_nan() {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        let in_unit = |v: F| v >= F::zero() && v <= F::one();
        if !in_unit(self.delta_min) || !in_unit(self.delta_max) {
            return Err(Error::Config(format!(
                "thresholds must lie in [0,1], got delta_min={} delta_max={}",
                self.delta_min, self.delta_max
            )));
        }
        if self.delta_min > self.delta_max {
            return Err(Error::Config(format!(
                "delta_min {} exceeds delta_max {}",
                self.delta_min, self.delta_max
            )));
        }
        if self.offset <= F::one() || self.offset.is_nan() {
            return Err(Error::Config(format!("offset must be > 1, got {}", self.offset)));
        }
        Ok(())
    }

    /// Number of steps in the pre-alignment phase, ceil(S / sigma) capped at S.
    pub fn pre_alignment_steps(&self) -> usize {
        let s = F::cast(self.total_steps as f64);
        let boundary = (s / self.sigma).ceil().to_f64().unwrap() as usize;
        boundary.min(self.total_steps)
    }
}

/// A schedule position: config plus the current step s in [0, total_steps].
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState<F> {
    pub step: usize,
    pub config: CurriculumConfig<F>,
}

impl<F: Real> CurriculumState<F> {
    pub fn new(step: usize, config: CurriculumConfig<F>) -> Self {
        debug_assert!(step <= config.total_steps, "step {step} past total_steps");
        Self { step, config }
    }

    /// Progress through the pre-alignment phase, (s/S) * sigma, unclamped.
    fn paced_progress(&self) -> F {
        F::cast(self.step as f64) / F::cast(self.config.total_steps as f64) * self.config.sigma
    }

    /// Forced-prefix length k(s) = floor(max(0, 1 - (s/S) * sigma) * |y|):
    /// the whole answer at s = 0, zero from s >= S/sigma on.
    pub fn prefix_length(&self, answer_len: usize) -> usize {
        assert!(answer_len >= 1, "answer_len must be >= 1");
        let ratio = (F::one() - self.paced_progress()).max(F::zero());
        (ratio * F::cast(answer_len as f64)).floor().to_f64().unwrap() as usize
    }

    /// Pass threshold delta(s), ramping linearly from delta_min to delta_max
    /// over the pre-alignment phase and constant afterwards.
    pub fn threshold(&self) -> F {
        let ramp = self.paced_progress().min(F::one());
        self.config.delta_min + (self.config.delta_max - self.config.delta_min) * ramp
    }

    /// True during the pre-alignment phase, s < S / sigma.
    pub fn in_pre_alignment(&self) -> bool {
        self.paced_progress() < F::one()
    }
}

/// Difficulty weight w = 1 / (offset + mean_reward). Rejects arguments where
/// the denominator is not strictly positive; that cannot happen for mean
/// rewards in [-1, +1] once offset > 1.
pub fn difficulty_weight<F: Real>(mean_reward: F, offset: F) -> Result<F> {
    let denom = offset + mean_reward;
    if denom <= F::zero() || denom.is_nan() {
        return Err(Error::Numeric(format!(
            "difficulty weight denominator {denom} (offset {offset} + mean reward {mean_reward}) must be > 0"
        )));
    }
    Ok(F::one() / denom)
}
