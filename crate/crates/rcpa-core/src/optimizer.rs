//! Objective values and exact analytic gradients for every training
//! strategy, plus the plain gradient-ascent update.
//!
//! The clipped group objective (maximization sense) over groups of G
//! trajectories is
//!
//!   J = mean_groups (1/G) sum_i (1/N_i) sum_{t in suffix}
//!         [ min(rho_t * A_i, clip(rho_t, 1-eps, 1+eps) * A_i) * w
//!           - gamma * (u_t - ln u_t - 1) ]
//!
//! with rho_t = exp(logp_theta - logp_old) the importance ratio against the
//! sampling policy, A_i the group-standardized advantage, w the group's
//! difficulty weight, and u_t = exp(logp_ref - logp_theta) the per-token
//! KL-penalty estimator against the frozen reference. The curriculum variant
//! normalizes by suffix length N_i = |o_i| - k and skips the forced prefix;
//! the plain variant normalizes by the full length |o_i| with w = 1.
//!
//! Gradients use the subgradient convention for min (active branch wins,
//! ties take the unclipped branch; a saturated clip has zero gradient) and
//! treat logp_old and logp_ref as constants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::curriculum::CurriculumState;
use crate::error::{Error, Result};
use crate::policy::{ParamGradient, Policy, Token};
use crate::scalar::Real;

/// Below this population std a reward group carries no relative signal and
/// its advantages are zeroed instead of divided into a blowup.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Strategy and training configuration
// ---------------------------------------------------------------------------

/// Training strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Curriculum run: shrinking forced prefix, ramping threshold,
    /// difficulty-weighted groups.
    Rcpa,
    /// Group-relative baseline with the same composite binary reward at the
    /// fixed final threshold; no prefix, no weighting.
    Grpon,
    /// Group-relative baseline with exact-match +1/-1 reward.
    GrpoExact,
    /// Supervised fine-tuning on the target answers.
    Sft,
    /// Supervised fine-tuning with an exact next-token KL anchor to the
    /// starting policy.
    Cfft,
    /// A supervised cold-start pass followed by the grpon schedule.
    ColdstartThenGrpon,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Rcpa,
        Strategy::Grpon,
        Strategy::GrpoExact,
        Strategy::Sft,
        Strategy::Cfft,
        Strategy::ColdstartThenGrpon,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Rcpa => "rcpa",
            Strategy::Grpon => "grpon",
            Strategy::GrpoExact => "grpo_exact",
            Strategy::Sft => "sft",
            Strategy::Cfft => "cfft",
            Strategy::ColdstartThenGrpon => "coldstart_then_grpon",
        }
    }

    /// True for the strategies that optimize the clipped group objective.
    pub fn is_group_relative(&self) -> bool {
        matches!(
            self,
            Strategy::Rcpa | Strategy::Grpon | Strategy::GrpoExact | Strategy::ColdstartThenGrpon
        )
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Optimization hyperparameters shared by all strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound = "F: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct TrainConfig<F> {
    /// Trajectories sampled per prompt (G).
    pub group_size: usize,
    /// Importance-ratio clip band half-width (eps).
    pub clip_eps: F,
    /// KL-penalty coefficient (gamma).
    pub kl_coef: F,
    /// Ascent step size for the group-relative objectives.
    pub learning_rate: F,
    /// Ascent step size for the supervised objectives. Group-relative
    /// per-token terms are normalized by group and suffix length, so the two
    /// objectives live on very different gradient scales.
    pub sft_learning_rate: F,
    /// Ascent steps per sampled batch.
    pub inner_epochs: usize,
    /// Sampling cap on generated suffix length.
    pub max_suffix_len: usize,
    /// Strategy trained when the run config does not list several.
    pub strategy: Strategy,
}

impl<F: Real> Default for TrainConfig<F> {
    fn default() -> Self {
        Self {
            group_size: 128,
            clip_eps: F::cast(0.2),
            kl_coef: F::cast(0.01),
            learning_rate: F::cast(80.0),
            sft_learning_rate: F::cast(16.0),
            inner_epochs: 1,
            max_suffix_len: 8,
            strategy: Strategy::Rcpa,
        }
    }
}

impl<F: Real> TrainConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config(format!("group_size must be >= 2, got {}", self.group_size)));
        }
        if !(self.clip_eps > F::zero() && self.clip_eps < F::one()) {
            return Err(Error::Config(format!("clip_eps must be in (0,1), got {}", self.clip_eps)));
        }
        if self.kl_coef < F::zero() {
            return Err(Error::Config(format!("kl_coef must be >= 0, got {}", self.kl_coef)));
        }
        if self.learning_rate < F::zero() || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.sft_learning_rate < F::zero() || !self.sft_learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "sft_learning_rate must be finite and >= 0, got {}",
                self.sft_learning_rate
            )));
        }
        if self.inner_epochs < 1 {
            return Err(Error::Config("inner_epochs must be >= 1".into()));
        }
        if self.max_suffix_len < 1 {
            return Err(Error::Config("max_suffix_len must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Trajectories and groups
// ---------------------------------------------------------------------------

/// One sampled rollout: prompt, forced prefix followed by the generated
/// suffix, and the behavior log-probabilities of the suffix tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F> {
    /// Conditioning tokens preceding the response.
    pub prompt: Vec<Token>,
    /// How many leading response tokens were forced rather than sampled.
    pub prefix_len: usize,
    /// Full response: forced prefix ++ generated suffix, the suffix ending
    /// with eos unless the length cap hit first.
    pub tokens: Vec<Token>,
    /// log-probability of each suffix token under the sampling policy;
    /// length equals `suffix_len`.
    pub behavior_logps: Vec<F>,
}

impl<F: Real> Trajectory<F> {
    pub fn new(
        prompt: Vec<Token>,
        prefix_len: usize,
        tokens: Vec<Token>,
        behavior_logps: Vec<F>,
    ) -> Result<Self> {
        if prefix_len >= tokens.len() {
            return Err(Error::Mismatch(format!(
                "prefix length {prefix_len} leaves no generated suffix in a {}-token response",
                tokens.len()
            )));
        }
        if behavior_logps.len() != tokens.len() - prefix_len {
            return Err(Error::Mismatch(format!(
                "{} behavior log-probs for a {}-token suffix",
                behavior_logps.len(),
                tokens.len() - prefix_len
            )));
        }
        Ok(Self { prompt, prefix_len, tokens, behavior_logps })
    }

    /// Number of generated (non-forced) tokens.
    pub fn suffix_len(&self) -> usize {
        self.tokens.len() - self.prefix_len
    }

    /// The response as scored against the reference: full token sequence
    /// with a terminating eos removed.
    pub fn response_for_scoring(&self, eos: Token) -> &[Token] {
        match self.tokens.last() {
            Some(&t) if t == eos => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// G trajectories for one prompt with their rewards, standardized
/// advantages, and the group's difficulty weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseGroup<F> {
    pub trajectories: Vec<Trajectory<F>>,
    pub rewards: Vec<F>,
    pub advantages: Vec<F>,
    pub weight: F,
}

impl<F: Real> ResponseGroup<F> {
    /// Builds a group, standardizing the advantages from the rewards.
    pub fn new(trajectories: Vec<Trajectory<F>>, rewards: Vec<F>, weight: F) -> Result<Self> {
        if trajectories.len() < 2 {
            return Err(Error::Mismatch(format!(
                "a response group needs >= 2 trajectories, got {}",
                trajectories.len()
            )));
        }
        if rewards.len() != trajectories.len() {
            return Err(Error::Mismatch(format!(
                "{} rewards for {} trajectories",
                rewards.len(),
                trajectories.len()
            )));
        }
        let advantages = standardized_advantages(&rewards);
        Ok(Self { trajectories, rewards, advantages, weight })
    }

    pub fn mean_reward(&self) -> F {
        self.rewards.iter().copied().sum::<F>() / F::cast(self.rewards.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Scalar building blocks
// ---------------------------------------------------------------------------

/// Population-standardized advantages (r - mean) / std. A group whose
/// population std falls below [`ADVANTAGE_STD_FLOOR`] returns all zeros.
pub fn standardized_advantages<F: Real>(rewards: &[F]) -> Vec<F> {
    assert!(rewards.len() >= 2, "need >= 2 rewards to standardize");
    let n = F::cast(rewards.len() as f64);
    let mean = rewards.iter().copied().sum::<F>() / n;
    let var = rewards.iter().map(|&r| (r - mean) * (r - mean)).sum::<F>() / n;
    let std = var.sqrt();
    if std < F::cast(ADVANTAGE_STD_FLOOR) {
        return vec![F::zero(); rewards.len()];
    }
    rewards.iter().map(|&r| (r - mean) / std).collect()
}

/// Importance sampling ratio exp(logp_new - logp_old).
pub fn importance_ratio<F: Real>(logp_new: F, logp_old: F) -> F {
    (logp_new - logp_old).exp()
}

/// Pessimistic clipped surrogate min(rho * adv, clip(rho, 1-eps, 1+eps) * adv).
pub fn clipped_term<F: Real>(rho: F, adv: F, eps: F) -> F {
    let clipped_rho = rho.max(F::one() - eps).min(F::one() + eps);
    (rho * adv).min(clipped_rho * adv)
}

/// Nonnegative per-token KL-penalty estimator: with u = exp(logp_ref -
/// logp_theta), returns u - ln u - 1.
pub fn kl_penalty_estimate<F: Real>(logp_theta: F, logp_ref: F) -> F {
    let log_u = logp_ref - logp_theta;
    log_u.exp() - log_u - F::one()
}

// ---------------------------------------------------------------------------
// Group-relative objectives
// ---------------------------------------------------------------------------

/// Per-(row, target-token) log-prob coefficients, expanded into the full
/// softmax-row gradient only once per distinct coordinate.
struct LogProbAccumulator<F> {
    coeffs: BTreeMap<(usize, Token), F>,
}

impl<F: Real> LogProbAccumulator<F> {
    fn new() -> Self {
        Self { coeffs: BTreeMap::new() }
    }

    fn push(&mut self, row: usize, target: Token, coeff: F) {
        *self.coeffs.entry((row, target)).or_insert_with(F::zero) += coeff;
    }

    /// Expands sum_k c_k * grad log p(target_k | row_k) into a parameter
    /// gradient; each row's probabilities are computed once.
    fn into_gradient(self, policy: &Policy<F>) -> ParamGradient<F> {
        let mut grad = ParamGradient::new();
        let mut cached_row = usize::MAX;
        let mut probs: Vec<F> = Vec::new();
        for ((row, target), coeff) in self.coeffs {
            if row != cached_row {
                probs = policy.row_probs(row);
                cached_row = row;
            }
            for (j, &p) in probs.iter().enumerate() {
                let indicator = if j == target { F::one() } else { F::zero() };
                grad.accumulate(row, j, coeff * (indicator - p));
            }
        }
        grad
    }
}

/// How a trajectory's token sum is normalized.
enum Normalization {
    /// Divide by the generated suffix length |o| - k.
    SuffixLen,
    /// Divide by the full response length |o|.
    FullLen,
}

fn check_policy_shapes<F: Real>(
    theta: &Policy<F>,
    old: &Policy<F>,
    reference: &Policy<F>,
) -> Result<()> {
    for (name, other) in [("old", old), ("ref", reference)] {
        if other.order() != theta.order() || other.vocab() != theta.vocab() {
            return Err(Error::Mismatch(format!(
                "{name} policy shape (order {}, vocab {}) differs from theta (order {}, vocab {})",
                other.order(),
                other.vocab().size(),
                theta.order(),
                theta.vocab().size()
            )));
        }
    }
    Ok(())
}

/// Shared core of the group-relative objectives. Walks every suffix token,
/// adds its value contribution, and records the log-prob coefficient of the
/// active surrogate branch plus the KL penalty.
fn clipped_group_objective<F: Real>(
    groups: &[ResponseGroup<F>],
    theta: &Policy<F>,
    old: &Policy<F>,
    reference: &Policy<F>,
    cfg: &TrainConfig<F>,
    norm: Normalization,
    use_weight: bool,
) -> Result<(F, ParamGradient<F>)> {
    check_policy_shapes(theta, old, reference)?;
    if groups.is_empty() {
        return Ok((F::zero(), ParamGradient::new()));
    }
    let group_scale = F::one() / F::cast(groups.len() as f64);
    let mut value = F::zero();
    let mut acc = LogProbAccumulator::new();
    let mut preceding: Vec<Token> = Vec::new();

    for group in groups {
        let weight = if use_weight { group.weight } else { F::one() };
        let traj_scale = group_scale / F::cast(group.trajectories.len() as f64);
        for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
            let denom = match norm {
                Normalization::SuffixLen => traj.suffix_len(),
                Normalization::FullLen => traj.tokens.len(),
            };
            let token_scale = traj_scale / F::cast(denom as f64);

            preceding.clear();
            preceding.extend_from_slice(&traj.prompt);
            preceding.extend_from_slice(&traj.tokens[..traj.prefix_len]);
            for (offset, &token) in traj.tokens[traj.prefix_len..].iter().enumerate() {
                let row = theta.context_id(&preceding);
                let logp_theta = theta.log_prob(&preceding, token);
                let logp_old = traj.behavior_logps[offset];
                let logp_ref = reference.log_prob(&preceding, token);

                // Surrogate term and its active-branch coefficient.
                let rho = importance_ratio(logp_theta, logp_old);
                let clipped_rho = rho.max(F::one() - cfg.clip_eps).min(F::one() + cfg.clip_eps);
                let unclipped = rho * adv;
                let clipped = clipped_rho * adv;
                let (term, d_term) = if unclipped <= clipped {
                    // d(rho * adv)/d logp_theta = rho * adv
                    (unclipped, unclipped)
                } else {
                    // Saturated clip: constant in theta.
                    (clipped, F::zero())
                };

                // KL penalty u - ln u - 1 with u = exp(logp_ref - logp_theta);
                // d(-gamma * kl)/d logp_theta = gamma * (u - 1).
                let u = (logp_ref - logp_theta).exp();
                let kl_est = u - (logp_ref - logp_theta) - F::one();

                value += token_scale * (weight * term - cfg.kl_coef * kl_est);
                let coeff = token_scale * (weight * d_term + cfg.kl_coef * (u - F::one()));
                acc.push(row, token, coeff);

                preceding.push(token);
            }
        }
    }
    Ok((value, acc.into_gradient(theta)))
}

/// Curriculum objective: suffix-only token sums normalized by suffix length,
/// group difficulty weights applied to the surrogate term. Returns the value
/// and its exact gradient in maximization sense.
///
/// `state` is the schedule position the groups were sampled at; it is part
/// of the signature for auditability (the trajectories already carry their
/// forced prefix lengths).
pub fn rcpa_objective<F: Real>(
    groups: &[ResponseGroup<F>],
    theta: &Policy<F>,
    old: &Policy<F>,
    reference: &Policy<F>,
    cfg: &TrainConfig<F>,
    state: &CurriculumState<F>,
) -> Result<(F, ParamGradient<F>)> {
    let _ = state;
    clipped_group_objective(groups, theta, old, reference, cfg, Normalization::SuffixLen, true)
}

/// Plain group-relative objective: full-length normalization, unit weights.
pub fn grpo_objective<F: Real>(
    groups: &[ResponseGroup<F>],
    theta: &Policy<F>,
    old: &Policy<F>,
    reference: &Policy<F>,
    cfg: &TrainConfig<F>,
) -> Result<(F, ParamGradient<F>)> {
    clipped_group_objective(groups, theta, old, reference, cfg, Normalization::FullLen, false)
}

// ---------------------------------------------------------------------------
// Supervised objectives
// ---------------------------------------------------------------------------

/// Supervised log-likelihood: mean over examples of the summed token
/// log-probabilities of y given x (maximization sense), with exact gradient.
pub fn sft_loss<F: Real>(batch: &[(Vec<Token>, Vec<Token>)], theta: &Policy<F>) -> (F, ParamGradient<F>) {
    assert!(!batch.is_empty(), "sft_loss: empty batch");
    let scale = F::one() / F::cast(batch.len() as f64);
    let mut value = F::zero();
    let mut acc = LogProbAccumulator::new();
    let mut preceding: Vec<Token> = Vec::new();
    for (x, y) in batch {
        preceding.clear();
        preceding.extend_from_slice(x);
        for &token in y {
            value += scale * theta.log_prob(&preceding, token);
            acc.push(theta.context_id(&preceding), token, scale);
            preceding.push(token);
        }
    }
    (value, acc.into_gradient(theta))
}

/// Supervised objective with an exact next-token KL anchor:
///
///   sft_loss(batch) - kl_coef * mean_ctx KL(theta || reference)(ctx)
///
/// over the supplied contexts (maximization sense). An empty context list
/// drops the anchor term. The KL gradient at a row is
/// p_j * (ln(p_j / q_j) - KL), exact for the softmax parameterization.
pub fn cfft_loss<F: Real>(
    batch: &[(Vec<Token>, Vec<Token>)],
    theta: &Policy<F>,
    reference: &Policy<F>,
    kl_coef: F,
    contexts: &[Vec<Token>],
) -> Result<(F, ParamGradient<F>)> {
    check_policy_shapes(theta, theta, reference)?;
    let (mut value, mut grad) = sft_loss(batch, theta);
    if contexts.is_empty() || kl_coef == F::zero() {
        return Ok((value, grad));
    }
    let ctx_scale = kl_coef / F::cast(contexts.len() as f64);
    let size = theta.vocab().size();
    for ctx in contexts {
        let row = theta.context_id(ctx);
        let kl = theta.next_kl_row(reference, row);
        value -= ctx_scale * kl;
        let p = theta.row_probs(row);
        let q = reference.row_probs(row);
        for j in 0..size {
            if p[j] > F::zero() {
                let log_ratio = p[j].ln() - q[j].ln();
                grad.accumulate(row, j, -ctx_scale * p[j] * (log_ratio - kl));
            }
        }
    }
    Ok((value, grad))
}

/// One gradient-ascent step: returns a policy with logits + lr * grad.
/// Rejects non-finite gradients or learning rates; lr = 0 returns an
/// unchanged copy.
pub fn ascend<F: Real>(theta: &Policy<F>, grad: &ParamGradient<F>, lr: F) -> Result<Policy<F>> {
    let mut next = theta.clone();
    next.apply_gradient(grad, lr)?;
    Ok(next)
}
