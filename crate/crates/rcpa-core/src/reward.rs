//! Composite similarity scoring and binary thresholded rewards.
//!
//! A response o is scored against a reference y along three axes
//! (semantic, factual, entity), each a deterministic sequence metric in
//! [0, 1]. The axes combine into one similarity
//!
//!   S = alpha * S_s + (1 - alpha) * (beta * S_f + (1 - beta) * S_e)
//!
//! and the training signal is the strict threshold pass
//!
//!   R = +1 if S > delta, else -1.
//!
//! The toy backends here stand in for model-based scorers; anything that
//! produces a [`SimilarityTriple`] can be slotted in behind the same
//! interface.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Token, Vocabulary};
use crate::scalar::Real;

/// Similarity backend selector. Only the deterministic toy backend exists;
/// unknown names are rejected when the config is parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityBackend {
    #[default]
    Toy,
}

/// Reward shape: mixing weights for the similarity axes plus the backend
/// that produces them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound = "F: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct RewardSpec<F> {
    /// Weight of the semantic axis; the factual/entity pair gets `1 - alpha`.
    pub alpha: F,
    /// Within the non-semantic share, weight of the factual axis.
    pub beta: F,
    /// Similarity backend producing the triple.
    pub backend: SimilarityBackend,
}

impl<F: Real> Default for RewardSpec<F> {
    fn default() -> Self {
        Self { alpha: F::cast(0.6), beta: F::cast(0.7), backend: SimilarityBackend::Toy }
    }
}

impl<F: Real> RewardSpec<F> {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: F| v >= F::zero() && v <= F::one();
        if !in_unit(self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if !in_unit(self.beta) {
            return Err(Error::Config(format!("beta must be in [0,1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Per-axis similarity scores, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTriple<F> {
    pub semantic: F,
    pub factual: F,
    pub entity: F,
}

/// Longest common subsequence length, the classic O(|o|*|y|) table.
fn lcs_len(o: &[Token], y: &[Token]) -> usize {
    let mut prev = vec![0usize; y.len() + 1];
    let mut cur = vec![0usize; y.len() + 1];
    for &ot in o {
        for (j, &yt) in y.iter().enumerate() {
            cur[j + 1] = if ot == yt { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[y.len()]
}

/// Semantic axis: LCS(o, y) / max(|o|, |y|). Both empty scores 1, exactly
/// one empty scores 0.
pub fn sim_semantic_toy<F: Real>(o: &[Token], y: &[Token]) -> F {
    if o.is_empty() && y.is_empty() {
        return F::one();
    }
    let denom = o.len().max(y.len());
    F::cast(lcs_len(o, y) as f64 / denom as f64)
}

/// Factual axis: with I the size of the token-set intersection, returns
/// min(I/|set(y)|, I/|set(o)|). Both empty scores 1, exactly one empty 0.
pub fn sim_factual_toy<F: Real>(o: &[Token], y: &[Token]) -> F {
    let so: std::collections::BTreeSet<Token> = o.iter().copied().collect();
    let sy: std::collections::BTreeSet<Token> = y.iter().copied().collect();
    match (so.is_empty(), sy.is_empty()) {
        (true, true) => return F::one(),
        (true, false) | (false, true) => return F::zero(),
        _ => {}
    }
    let inter = so.intersection(&sy).count() as f64;
    F::cast((inter / sy.len() as f64).min(inter / so.len() as f64))
}

fn entity_counts(seq: &[Token], vocab: &Vocabulary) -> BTreeMap<Token, usize> {
    let mut counts = BTreeMap::new();
    for &t in seq {
        if vocab.is_entity(t) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    counts
}

/// Entity axis: F1 over the multiset intersection of entity-flagged tokens,
/// 2I / (|E_o| + |E_y|). Both entity multisets empty scores 1, exactly one
/// empty scores 0.
pub fn sim_entity_toy<F: Real>(o: &[Token], y: &[Token], vocab: &Vocabulary) -> F {
    let co = entity_counts(o, vocab);
    let cy = entity_counts(y, vocab);
    let no: usize = co.values().sum();
    let ny: usize = cy.values().sum();
    match (no == 0, ny == 0) {
        (true, true) => return F::one(),
        (true, false) | (false, true) => return F::zero(),
        _ => {}
    }
    let inter: usize = co.iter().map(|(t, &c)| c.min(cy.get(t).copied().unwrap_or(0))).sum();
    F::cast(2.0 * inter as f64 / (no + ny) as f64)
}

/// Scores all three axes with the selected backend.
pub fn similarity_triple<F: Real>(
    o: &[Token],
    y: &[Token],
    spec: &RewardSpec<F>,
    vocab: &Vocabulary,
) -> SimilarityTriple<F> {
    match spec.backend {
        SimilarityBackend::Toy => SimilarityTriple {
            semantic: sim_semantic_toy(o, y),
            factual: sim_factual_toy(o, y),
            entity: sim_entity_toy(o, y, vocab),
        },
    }
}

/// Combines a triple into one score:
/// alpha * S_s + (1 - alpha) * (beta * S_f + (1 - beta) * S_e).
pub fn composite_similarity<F: Real>(t: &SimilarityTriple<F>, spec: &RewardSpec<F>) -> F {
    spec.alpha * t.semantic
        + (F::one() - spec.alpha) * (spec.beta * t.factual + (F::one() - spec.beta) * t.entity)
}

/// Strict threshold pass: +1 if `s_val > delta`, else -1. Equality fails.
pub fn binary_reward<F: Real>(s_val: F, delta: F) -> F {
    if s_val > delta {
        F::one()
    } else {
        -F::one()
    }
}

/// Full response score: similarity triple, composite, threshold. Returns
/// (similarity, reward).
pub fn score_response<F: Real>(
    o: &[Token],
    y: &[Token],
    spec: &RewardSpec<F>,
    delta: F,
    vocab: &Vocabulary,
) -> (F, F) {
    let triple = similarity_triple(o, y, spec, vocab);
    let sim = composite_similarity(&triple, spec);
    (sim, binary_reward(sim, delta))
}
