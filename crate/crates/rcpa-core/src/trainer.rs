//! Single-run training loops.
//!
//! Every strategy shares one loop skeleton: per step s, draw the next item
//! from a reshuffled round-robin deck, build a batch, take `inner_epochs`
//! ascent steps, then log diagnostics. The strategies differ in how the
//! batch is built and scored:
//!
//! * `rcpa`: sample G suffixes after the forced prefix y[..k(s)], score
//!   the assembled responses at the ramping threshold delta(s), weight the
//!   group by 1/(offset + mean reward), ascend on the curriculum objective.
//! * `grpon`: the same group sampling with k = 0, fixed delta_max, unit
//!   weight, plain objective.
//! * `grpo_exact`: as grpon but the reward is exact match against y.
//! * `sft`: one supervised example per step, likelihood ascent on
//!   y ++ eos.
//! * `cfft`: sft plus an exact next-token KL anchor to the starting
//!   policy on the visited contexts.
//! * `coldstart_then_grpon`: sft for round(coldstart_epochs * |train|)
//!   steps, then grpon for the rest.
//!
//! The reference policy for KL terms is the starting policy throughout; the
//! sampling policy is refreshed from theta every step.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::curriculum::{difficulty_weight, CurriculumState};
use crate::error::Result;
use crate::metrics::MetricsRecord;
use crate::optimizer::{
    ascend, cfft_loss, grpo_objective, rcpa_objective, sft_loss, ResponseGroup, Strategy,
    Trajectory,
};
use crate::policy::{Policy, Token};
use crate::reward::score_response;
use crate::tasks::{eval_retention, eval_target, Scenario};

/// Free samples drawn per item by the periodic target evaluation.
pub const EVAL_SAMPLES_PER_ITEM: usize = 8;

// Independent deterministic streams per (strategy, seed) run.
const TRAIN_SALT: u64 = 0xd6e8_feb8_6659_fd93;
const EVAL_SALT: u64 = 0xa5a5_1c69_e2d4_4b7f;

/// Number of evaluation passes is bounded at ~50 per run:
/// evaluate every max(1, S/50) steps and always at the last step.
fn eval_cadence(total_steps: usize) -> usize {
    (total_steps / 50).max(1)
}

fn distinct_rows(policy: &Policy<f64>, prompt: &[Token], tokens: &[Token], from: usize) -> BTreeSet<usize> {
    let mut rows = BTreeSet::new();
    let mut preceding = prompt.to_vec();
    preceding.extend_from_slice(&tokens[..from]);
    for &tok in &tokens[from..] {
        rows.insert(policy.context_id(&preceding));
        preceding.push(tok);
    }
    rows
}

fn mean_row_kl(theta: &Policy<f64>, other: &Policy<f64>, rows: &BTreeSet<usize>) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|&r| theta.next_kl_row(other, r)).sum::<f64>() / rows.len() as f64
}

/// Trains one strategy from the scenario's starting policy for a full
/// schedule; returns the final policy and the complete per-step metrics
/// trace (exactly `total_steps` records). Pure function of
/// (config, scenario, strategy, seed).
pub fn train_run(
    cfg: &RunConfig,
    scenario: &Scenario,
    strategy: Strategy,
    seed: u64,
) -> Result<(Policy<f64>, Vec<MetricsRecord>)> {
    cfg.validate()?;
    let total_steps = cfg.curriculum.total_steps;
    let cadence = eval_cadence(total_steps);
    let group_size = cfg.train.group_size;
    let pre = &scenario.pre;
    let eos = scenario.vocab.eos();
    let delta_max = cfg.curriculum.delta_max;

    let mut theta = pre.clone();
    let mut train_rng = ChaCha8Rng::seed_from_u64(seed ^ TRAIN_SALT);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SALT);

    let n_items = scenario.train.items.len();
    let coldstart_steps = if strategy == Strategy::ColdstartThenGrpon {
        (cfg.coldstart_epochs * n_items as f64).round() as usize
    } else {
        0
    };

    let mut deck: Vec<usize> = (0..n_items).collect();
    let mut records = Vec::with_capacity(total_steps);
    let mut last_similarity = 0.0;
    let mut last_retention = 0.0;

    for s in 0..total_steps {
        if s % n_items == 0 {
            deck.shuffle(&mut train_rng);
        }
        let item = &scenario.train.items[deck[s % n_items]];
        let y = &item.answer;
        let state = CurriculumState::new(s, cfg.curriculum.clone());
        let supervised = matches!(strategy, Strategy::Sft | Strategy::Cfft)
            || (strategy == Strategy::ColdstartThenGrpon && s < coldstart_steps);

        let (mean_reward, threshold, prefix_ratio, weight, visited);
        if supervised {
            // Diagnostics first: free samples from the pre-update policy,
            // scored at the final threshold.
            let mut reward_sum = 0.0;
            let budget = y.len().min(cfg.train.max_suffix_len).max(1);
            for _ in 0..group_size {
                let (mut out, _) = theta.sample_suffix(&item.prompt, budget, &mut train_rng);
                if out.last() == Some(&eos) {
                    out.pop();
                }
                reward_sum += score_response(&out, y, &cfg.reward, delta_max, &scenario.vocab).1;
            }
            mean_reward = reward_sum / group_size as f64;
            threshold = delta_max;
            prefix_ratio = 0.0;
            weight = 1.0;

            let mut target = y.clone();
            target.push(eos);
            let mut contexts: Vec<Vec<Token>> = Vec::with_capacity(target.len());
            let mut preceding = item.prompt.clone();
            for &tok in &target {
                contexts.push(preceding.clone());
                preceding.push(tok);
            }
            visited = distinct_rows(&theta, &item.prompt, &target, 0);
            let batch = vec![(item.prompt.clone(), target)];
            let pi_prev = theta.clone();
            for _ in 0..cfg.train.inner_epochs {
                let (_value, grad) = if strategy == Strategy::Cfft {
                    cfft_loss(&batch, &theta, pre, cfg.train.kl_coef, &contexts)?
                } else {
                    sft_loss(&batch, &theta)
                };
                theta = ascend(&theta, &grad, cfg.train.sft_learning_rate)?;
            }
            push_record(
                &mut records,
                RecordInputs {
                    step: s,
                    strategy,
                    seed,
                    mean_reward,
                    threshold,
                    prefix_ratio,
                    weight,
                    kl_to_ref: mean_row_kl(&theta, pre, &visited),
                    kl_consecutive: mean_row_kl(&theta, &pi_prev, &visited),
                    last_similarity,
                    last_retention,
                },
            );
        } else {
            let k = if strategy == Strategy::Rcpa { state.prefix_length(y.len()) } else { 0 };
            let delta =
                if strategy == Strategy::Rcpa { state.threshold() } else { delta_max };

            let mut context = item.prompt.clone();
            context.extend_from_slice(&y[..k]);
            // Sampling budget: the remaining answer length, so a response is
            // judged on completing the answer within its own footprint rather
            // than on stopping. Padded recitations no longer fit and score as
            // the partial answers they are.
            let budget = (y.len() - k).min(cfg.train.max_suffix_len).max(1);
            let pi_old = theta.clone();
            let mut trajectories = Vec::with_capacity(group_size);
            let mut rewards = Vec::with_capacity(group_size);
            for _ in 0..group_size {
                let (suffix, logps) = pi_old.sample_suffix(&context, budget, &mut train_rng);
                let mut tokens = y[..k].to_vec();
                tokens.extend_from_slice(&suffix);
                let traj = Trajectory::new(item.prompt.clone(), k, tokens, logps)?;
                let response = traj.response_for_scoring(eos);
                let reward = if strategy == Strategy::GrpoExact {
                    if response == &y[..] {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    score_response(response, y, &cfg.reward, delta, &scenario.vocab).1
                };
                trajectories.push(traj);
                rewards.push(reward);
            }
            mean_reward = rewards.iter().sum::<f64>() / group_size as f64;
            weight = if strategy == Strategy::Rcpa {
                difficulty_weight(mean_reward, cfg.curriculum.offset)?
            } else {
                1.0
            };
            threshold = delta;
            prefix_ratio = k as f64 / y.len() as f64;

            let group = ResponseGroup::new(trajectories, rewards, weight)?;
            visited = group
                .trajectories
                .iter()
                .flat_map(|t| distinct_rows(&theta, &t.prompt, &t.tokens, t.prefix_len))
                .collect();
            let groups = [group];
            for _ in 0..cfg.train.inner_epochs {
                let (_value, grad) = if strategy == Strategy::Rcpa {
                    rcpa_objective(&groups, &theta, &pi_old, pre, &cfg.train, &state)?
                } else {
                    grpo_objective(&groups, &theta, &pi_old, pre, &cfg.train)?
                };
                theta = ascend(&theta, &grad, cfg.train.learning_rate)?;
            }
            push_record(
                &mut records,
                RecordInputs {
                    step: s,
                    strategy,
                    seed,
                    mean_reward,
                    threshold,
                    prefix_ratio,
                    weight,
                    kl_to_ref: mean_row_kl(&theta, pre, &visited),
                    kl_consecutive: mean_row_kl(&theta, &pi_old, &visited),
                    last_similarity,
                    last_retention,
                },
            );
        }

        if s % cadence == 0 || s == total_steps - 1 {
            let (similarity, _reward) = eval_target(
                &theta,
                &scenario.train,
                &cfg.reward,
                delta_max,
                EVAL_SAMPLES_PER_ITEM,
                &mut eval_rng,
            );
            let (delta_loglik, _kl) = eval_retention(&theta, pre, &scenario.held_out);
            last_similarity = similarity;
            last_retention = delta_loglik;
            let rec = records.last_mut().expect("record pushed this step");
            rec.target_similarity = similarity;
            rec.retention_delta_loglik = delta_loglik;
        }
    }
    Ok((theta, records))
}

struct RecordInputs {
    step: usize,
    strategy: Strategy,
    seed: u64,
    mean_reward: f64,
    threshold: f64,
    prefix_ratio: f64,
    weight: f64,
    kl_to_ref: f64,
    kl_consecutive: f64,
    last_similarity: f64,
    last_retention: f64,
}

fn push_record(records: &mut Vec<MetricsRecord>, inputs: RecordInputs) {
    records.push(MetricsRecord {
        step: inputs.step,
        strategy: inputs.strategy.as_str().to_string(),
        seed: inputs.seed,
        mean_reward: inputs.mean_reward,
        threshold: inputs.threshold,
        prefix_ratio: inputs.prefix_ratio,
        cdp_weight_mean: inputs.weight,
        kl_to_ref: inputs.kl_to_ref,
        kl_consecutive: inputs.kl_consecutive,
        target_similarity: inputs.last_similarity,
        retention_delta_loglik: inputs.last_retention,
    });
}

/// Full curriculum run; thin wrapper fixing the strategy.
pub fn train_rcpa(
    cfg: &RunConfig,
    scenario: &Scenario,
    seed: u64,
) -> Result<(Policy<f64>, Vec<MetricsRecord>)> {
    train_run(cfg, scenario, Strategy::Rcpa, seed)
}

/// Baseline run with the curriculum bypassed as the strategy dictates.
pub fn train_baseline(
    cfg: &RunConfig,
    scenario: &Scenario,
    strategy: Strategy,
    seed: u64,
) -> Result<(Policy<f64>, Vec<MetricsRecord>)> {
    train_run(cfg, scenario, strategy, seed)
}
