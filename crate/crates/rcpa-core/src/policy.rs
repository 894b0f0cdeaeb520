//! Order-m tabular softmax token policies with exact gradients.
//!
//! A policy is a logit table indexed by (context id, next token). The context
//! id encodes the last `order` tokens of the preceding sequence in base
//! `size + 1`; positions before the start of the sequence are filled with a
//! reserved begin-of-sequence id (= `size`) that is never emitted. Every
//! quantity the training objectives need is closed-form:
//!
//!   log p(t | ctx)           = z[ctx][t] - logsumexp(z[ctx])
//!   d log p(t | ctx) / dz[j] = [j == t] - p(j | ctx)
//!   KL(p || q)(ctx)          = sum_t p(t|ctx) (log p(t|ctx) - log q(t|ctx))
//!
//! so analytic gradients can be checked against finite differences to tight
//! tolerances.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Token id. Valid emitted tokens are `0..vocab.size()`; `vocab.size()`
/// itself is the internal begin-of-sequence padding id.
pub type Token = usize;

/// Token alphabet plus the entity flags used by the entity similarity score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    eos: Token,
    entity_mask: Vec<bool>,
}

impl Vocabulary {
    /// Builds a vocabulary, validating `size >= 2`, `eos < size` and the
    /// entity mask length.
    pub fn new(size: usize, eos: Token, entity_mask: Vec<bool>) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("vocab size must be >= 2, got {size}")));
        }
        if eos >= size {
            return Err(Error::Config(format!("eos id {eos} out of range for size {size}")));
        }
        if entity_mask.len() != size {
            return Err(Error::Config(format!(
                "entity mask length {} != vocab size {size}",
                entity_mask.len()
            )));
        }
        Ok(Self { size, eos, entity_mask })
    }

    /// Convenience constructor flagging every `stride`-th token id as an entity.
    pub fn with_entity_stride(size: usize, eos: Token, stride: usize) -> Result<Self> {
        let mask = (0..size).map(|t| stride > 0 && t % stride == 0).collect();
        Self::new(size, eos, mask)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eos(&self) -> Token {
        self.eos
    }

    pub fn is_entity(&self, token: Token) -> bool {
        token < self.size && self.entity_mask[token]
    }

    pub fn entity_mask(&self) -> &[bool] {
        &self.entity_mask
    }

    /// Internal begin-of-sequence padding id; never a valid emitted token.
    pub fn bos(&self) -> Token {
        self.size
    }
}

/// Sparse parameter gradient: map from (context id, token) logit coordinates
/// to partial derivatives. Ordered so that accumulation and application are
/// deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGradient<F> {
    entries: BTreeMap<(usize, Token), F>,
}

impl<F: Real> ParamGradient<F> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Returns the entry at (context id, token), zero if absent.
    pub fn get(&self, ctx_id: usize, token: Token) -> F {
        self.entries.get(&(ctx_id, token)).copied().unwrap_or_else(F::zero)
    }

    /// Adds `value` into the entry at (context id, token).
    pub fn accumulate(&mut self, ctx_id: usize, token: Token, value: F) {
        *self.entries.entry((ctx_id, token)).or_insert_with(F::zero) += value;
    }

    /// Adds another gradient into this one.
    pub fn add(&mut self, other: &Self) {
        for (&k, &v) in &other.entries {
            *self.entries.entry(k).or_insert_with(F::zero) += v;
        }
    }

    /// Scales every entry by `c`.
    pub fn scale(&mut self, c: F) {
        for v in self.entries.values_mut() {
            *v *= c;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, Token), F)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    /// Euclidean norm over all stored entries.
    pub fn l2_norm(&self) -> F {
        self.entries.values().map(|&v| v * v).sum::<F>().sqrt()
    }

    /// True iff every stored entry is finite.
    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|v| v.is_finite())
    }
}

/// Raw policy file layout; numbers are written at 17 significant digits so a
/// JSON round trip is bit-exact for f64.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    order: usize,
    vocab_size: usize,
    eos: Token,
    entity_mask: Vec<bool>,
    logits: Vec<f64>,
}

/// Order-m context-conditioned softmax policy over a token vocabulary.
///
/// The logit table is dense: `(size + 1)^order` rows (all contexts, including
/// padded ones) by `size` columns. A per-row log-sum-exp cache keeps
/// `log_prob` O(1) after construction; any mutation goes through
/// [`Policy::apply_gradient`], which refreshes the cache for touched rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<F> {
    order: usize,
    vocab: Vocabulary,
    /// Row-major logits: entry (row, token) at `row * size + token`.
    logits: Vec<F>,
    /// Cached log-sum-exp per row.
    lse: Vec<F>,
}

impl<F: Real> Policy<F> {
    /// Policy with every next-token distribution uniform over the vocabulary.
    pub fn new_uniform(vocab: Vocabulary, order: usize) -> Self {
        let rows = (vocab.size() + 1).pow(order as u32);
        let size = vocab.size();
        let logits = vec![F::zero(); rows * size];
        let lse = vec![F::cast(size as f64).ln(); rows];
        Self { order, vocab, logits, lse }
    }

    /// Builds a policy from an explicit logit function over (row, token).
    pub fn from_logit_fn(
        vocab: Vocabulary,
        order: usize,
        mut f: impl FnMut(usize, Token) -> F,
    ) -> Self {
        let rows = (vocab.size() + 1).pow(order as u32);
        let size = vocab.size();
        let mut logits = Vec::with_capacity(rows * size);
        for row in 0..rows {
            for tok in 0..size {
                logits.push(f(row, tok));
            }
        }
        let mut policy = Self { order, vocab, logits, lse: vec![F::zero(); rows] };
        for row in 0..rows {
            policy.refresh_row(row);
        }
        policy
    }

    /// Maximum-likelihood fit with add-k smoothing:
    ///
    ///   z[ctx][t] = ln( (count(ctx, t) + k) / (count(ctx) + k * size) )
    ///
    /// Unseen rows come out exactly uniform. Rejects an empty corpus and
    /// non-positive smoothing.
    pub fn mle_fit(
        corpus: &[Vec<Token>],
        order: usize,
        smoothing: f64,
        vocab: Vocabulary,
    ) -> Result<Self> {
        if corpus.iter().all(|seq| seq.is_empty()) {
            return Err(Error::Config("mle_fit: empty corpus".into()));
        }
        if smoothing <= 0.0 {
            return Err(Error::Config(format!("mle_fit: smoothing must be > 0, got {smoothing}")));
        }
        let size = vocab.size();
        let rows = (size + 1).pow(order as u32);
        let mut counts = vec![0u64; rows * size];
        let mut totals = vec![0u64; rows];
        let probe = Self::new_uniform(vocab.clone(), order);
        for seq in corpus {
            for t in 0..seq.len() {
                let row = probe.context_id(&seq[..t]);
                counts[row * size + seq[t]] += 1;
                totals[row] += 1;
            }
        }
        let denom_smooth = smoothing * size as f64;
        Ok(Self::from_logit_fn(probe.vocab, order, |row, tok| {
            let c = counts[row * size + tok] as f64;
            let n = totals[row] as f64;
            F::cast(((c + smoothing) / (n + denom_smooth)).ln())
        }))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Number of context rows in the table, `(size + 1)^order`.
    pub fn n_rows(&self) -> usize {
        self.lse.len()
    }

    /// Number of free parameters, rows * size.
    pub fn n_params(&self) -> usize {
        self.logits.len()
    }

    pub fn logit(&self, ctx_id: usize, token: Token) -> F {
        self.logits[ctx_id * self.vocab.size() + token]
    }

    /// Context id for the last `order` tokens of `preceding`, left-padded
    /// with the begin-of-sequence id. Leftmost token is most significant.
    pub fn context_id(&self, preceding: &[Token]) -> usize {
        let base = self.vocab.size() + 1;
        let mut id = 0usize;
        for j in 0..self.order {
            let idx = preceding.len() as isize - self.order as isize + j as isize;
            let c = if idx < 0 { self.vocab.bos() } else { preceding[idx as usize] };
            debug_assert!(c < base, "token {c} out of range");
            id = id * base + c;
        }
        id
    }

    /// ln p(token | last `order` tokens of `preceding`); always <= 0.
    pub fn log_prob(&self, preceding: &[Token], token: Token) -> F {
        let row = self.context_id(preceding);
        self.logit(row, token) - self.lse[row]
    }

    /// Next-token probabilities for a context row.
    pub fn row_probs(&self, ctx_id: usize) -> Vec<F> {
        let size = self.vocab.size();
        let lse = self.lse[ctx_id];
        (0..size).map(|t| (self.logits[ctx_id * size + t] - lse).exp()).collect()
    }

    /// Next-token probabilities after `preceding`.
    pub fn next_probs(&self, preceding: &[Token]) -> Vec<F> {
        self.row_probs(self.context_id(preceding))
    }

    /// Gradient of ln p(token | context) with respect to the logit table:
    /// the context row gets `[j == token] - p(j)`, all other rows zero.
    pub fn grad_log_prob(&self, preceding: &[Token], token: Token) -> ParamGradient<F> {
        let row = self.context_id(preceding);
        let probs = self.row_probs(row);
        let mut grad = ParamGradient::new();
        for (j, &p) in probs.iter().enumerate() {
            let indicator = if j == token { F::one() } else { F::zero() };
            grad.accumulate(row, j, indicator - p);
        }
        grad
    }

    /// Autoregressively samples a suffix after `preceding` until eos is
    /// emitted or `max_len` tokens are produced. The returned sequence
    /// includes the terminating eos when one was emitted; the second vector
    /// holds the behavior log-probability of each sampled token.
    pub fn sample_suffix<R: Rng>(
        &self,
        preceding: &[Token],
        max_len: usize,
        rng: &mut R,
    ) -> (Vec<Token>, Vec<F>) {
        assert!(max_len >= 1, "max_len must be >= 1");
        let mut seq = preceding.to_vec();
        let mut out = Vec::new();
        let mut logps = Vec::new();
        while out.len() < max_len {
            let row = self.context_id(&seq);
            let token = self.sample_row(row, rng);
            out.push(token);
            logps.push(self.logit(row, token) - self.lse[row]);
            seq.push(token);
            if token == self.vocab.eos() {
                break;
            }
        }
        (out, logps)
    }

    fn sample_row<R: Rng>(&self, ctx_id: usize, rng: &mut R) -> Token {
        let probs = self.row_probs(ctx_id);
        let u: f64 = rng.gen();
        let mut acc = 0.0f64;
        let mut last_support = 0;
        for (t, &p) in probs.iter().enumerate() {
            let p = p.to_f64().unwrap_or(0.0);
            if p > 0.0 {
                last_support = t;
            }
            acc += p;
            if u < acc {
                return t;
            }
        }
        // Rounding left u just past the accumulated mass; emit the last
        // token with nonzero probability.
        last_support
    }

    /// Exact next-token KL divergence KL(self || q) at one context; >= 0.
    ///
    /// Both policies must share vocabulary and order.
    pub fn exact_next_kl(&self, q: &Self, preceding: &[Token]) -> F {
        assert_eq!(self.order, q.order, "exact_next_kl: order mismatch");
        assert_eq!(self.vocab, q.vocab, "exact_next_kl: vocabulary mismatch");
        self.next_kl_row(q, self.context_id(preceding))
    }

    /// Row-level exact KL(self || q); callers guarantee matching shapes.
    pub fn next_kl_row(&self, q: &Self, ctx_id: usize) -> F {
        let size = self.vocab.size();
        let mut kl = F::zero();
        for t in 0..size {
            let lp = self.logits[ctx_id * size + t] - self.lse[ctx_id];
            let p = lp.exp();
            if p > F::zero() {
                let lq = q.logits[ctx_id * size + t] - q.lse[ctx_id];
                kl += p * (lp - lq);
            }
        }
        kl
    }

    /// Adds `lr * grad` into the logit table, refreshing row caches. Rejects
    /// non-finite gradient entries. `lr = 0` is an exact identity.
    pub fn apply_gradient(&mut self, grad: &ParamGradient<F>, lr: F) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::Numeric("gradient contains non-finite entries".into()));
        }
        if !lr.is_finite() {
            return Err(Error::Numeric(format!("learning rate {lr} is not finite")));
        }
        let size = self.vocab.size();
        let mut touched_prev = usize::MAX;
        for ((row, tok), g) in grad.iter() {
            self.logits[row * size + tok] += lr * g;
            if row != touched_prev {
                if touched_prev != usize::MAX {
                    self.refresh_row(touched_prev);
                }
                touched_prev = row;
            }
        }
        if touched_prev != usize::MAX {
            self.refresh_row(touched_prev);
        }
        Ok(())
    }

    fn refresh_row(&mut self, row: usize) {
        let size = self.vocab.size();
        let slice = &self.logits[row * size..(row + 1) * size];
        let max = slice.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = if max.is_finite() {
            let sum: F = slice.iter().map(|&z| (z - max).exp()).sum();
            max + sum.ln()
        } else {
            // Row of all -inf has no distribution; keep -inf so misuse
            // surfaces as NaN log-probs instead of silent nonsense.
            max
        };
        self.lse[row] = lse;
    }

    /// Serializes to a self-describing JSON table: order, vocab size, eos,
    /// entity mask, and the logits flattened row-major by context id, written
    /// at 17 significant digits so parsing recovers bit-identical values.
    pub fn to_json_string(&self) -> Result<String> {
        if self.logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric("cannot serialize non-finite logits".into()));
        }
        let mut s = String::new();
        s.push_str("{\n");
        let _ = writeln!(s, "  \"order\": {},", self.order);
        let _ = writeln!(s, "  \"vocab_size\": {},", self.vocab.size());
        let _ = writeln!(s, "  \"eos\": {},", self.vocab.eos());
        let mask: Vec<&str> =
            self.vocab.entity_mask().iter().map(|&b| if b { "true" } else { "false" }).collect();
        let _ = writeln!(s, "  \"entity_mask\": [{}],", mask.join(", "));
        s.push_str("  \"logits\": [");
        for (i, z) in self.logits.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{:.16e}", z.to_f64().unwrap());
        }
        s.push_str("]\n}\n");
        Ok(s)
    }

    /// Parses a policy from the JSON produced by [`Policy::to_json_string`].
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: PolicyFile = serde_json::from_str(text)?;
        let vocab = Vocabulary::new(raw.vocab_size, raw.eos, raw.entity_mask)?;
        let rows = (raw.vocab_size + 1).pow(raw.order as u32);
        let expected = rows * raw.vocab_size;
        if raw.logits.len() != expected {
            return Err(Error::Config(format!(
                "policy file has {} logits, expected {expected} for order {} and vocab {}",
                raw.logits.len(),
                raw.order,
                raw.vocab_size
            )));
        }
        let logits = raw.logits;
        Ok(Self::from_logit_fn(vocab, raw.order, |row, tok| {
            F::cast(logits[row * raw.vocab_size + tok])
        }))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}
