//! Deterministic synthetic domain-adaptation scenarios.
//!
//! A scenario splits the vocabulary into a "source" half and a "target"
//! half around a reserved query marker, with eos at id 0:
//!
//!   [eos | source tokens ... | marker | target tokens ...]
//!
//! The source half carries a fixed seeded order-2 Markov generator standing
//! in for the pre-training distribution; fitting a policy to its corpus
//! yields the starting point every strategy trains from. The target dataset
//! is key-value recall: prompt = [marker, key tokens], answer = a codebook
//! value over the target half, constructed so the fitted policy's chance of
//! sampling any exact answer is below a hard bound (reward is sparse at the
//! start of training). Key bigrams reuse source bigrams of moderate corpus
//! frequency, so learning the answers competes directly with source
//! likelihood on shared context rows and retention becomes measurable.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Policy, Token, Vocabulary};
use crate::reward::{score_response, RewardSpec};

/// Add-k smoothing used when fitting the starting policy to the source
/// corpus. Keeps unseen-context rows close to uniform so sparse-reward
/// exploration stays possible.
pub const MLE_SMOOTHING: f64 = 0.5;

/// Length of every generated source sequence.
pub const SOURCE_SEQ_LEN: usize = 20;

/// Distinct continuations per source-model context.
pub const SOURCE_BRANCHING: usize = 6;

/// Keys whose bigram occurs more often than this in the source corpus are
/// excluded from the target codebook: the fitted policy is too confident on
/// such rows for the first answer token to ever be discovered by sampling.
/// Below the cap, warmer is better: overwriting a continuation that source
/// text actually uses is what shows up in the retention metric.
pub const HOT_BIGRAM_CAP: u64 = 256;

/// Hard upper bound on the fitted policy's probability of sampling an exact
/// target answer.
pub const EXACT_ANSWER_PROB_BOUND: f64 = 1e-3;

/// Number of disjoint codebook values the target dataset cycles through.
/// Keys sharing a value also share its interior context rows, so more
/// chains bound how many keys one badly-learned row can drag down.
pub const CODEBOOK_CHAINS: usize = 3;

// Independent deterministic streams derived from the scenario seed.
const SOURCE_MODEL_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const CORPUS_SALT: u64 = 0xbf58_476d_1ce4_e5b9;
const HELDOUT_SALT: u64 = 0x94d0_49bb_1331_11eb;
const TARGET_SALT: u64 = 0x2545_f491_4f6c_dd1d;

/// Scenario shape: vocabulary, corpus and dataset sizes, answer/key
/// lengths, the generator seed, and the entity-flag density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub vocab_size: usize,
    pub policy_order: usize,
    /// Number of source sequences in the fitting corpus.
    pub source_corpus_size: usize,
    pub target_train_size: usize,
    pub target_test_size: usize,
    pub answer_len: usize,
    pub key_len: usize,
    pub seed: u64,
    /// Fraction of token ids flagged as entities (every round(1/fraction)-th id).
    pub entity_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            policy_order: 2,
            source_corpus_size: 2000,
            target_train_size: 256,
            target_test_size: 64,
            answer_len: 6,
            key_len: 2,
            seed: 7,
            entity_fraction: 0.25,
        }
    }
}

impl ScenarioConfig {
    /// Reserved query-marker token separating the vocabulary halves.
    pub fn marker(&self) -> Token {
        self.vocab_size / 2
    }

    /// Source-half alphabet, ids 1 .. marker.
    pub fn source_tokens(&self) -> Vec<Token> {
        (1..self.marker()).collect()
    }

    /// Target-half alphabet, ids marker+1 .. vocab_size.
    pub fn target_tokens(&self) -> Vec<Token> {
        (self.marker() + 1..self.vocab_size).collect()
    }

    fn entity_stride(&self) -> usize {
        if self.entity_fraction <= 0.0 {
            0
        } else {
            (1.0 / self.entity_fraction).round().max(1.0) as usize
        }
    }

    /// Vocabulary with eos = 0 and entity flags at the configured density.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::with_entity_stride(self.vocab_size, 0, self.entity_stride())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("policy_order", self.policy_order),
            ("source_corpus_size", self.source_corpus_size),
            ("target_train_size", self.target_train_size),
            ("target_test_size", self.target_test_size),
            ("answer_len", self.answer_len),
            ("key_len", self.key_len),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.entity_fraction) {
            return Err(Error::Config(format!(
                "entity_fraction must be in [0,1], got {}",
                self.entity_fraction
            )));
        }
        let n_source = self.source_tokens().len();
        let n_target = self.target_tokens().len();
        if n_source < 3 {
            return Err(Error::Config(format!(
                "vocab_size {} leaves only {n_source} source tokens; need >= 3",
                self.vocab_size
            )));
        }
        let per_chain = answer_slots(self.answer_len)
            .iter()
            .filter_map(|s| *s)
            .max()
            .map_or(0, |m| m + 1)
            + 1;
        if n_target < CODEBOOK_CHAINS * per_chain {
            return Err(Error::Config(format!(
                "vocab_size {} leaves {n_target} target tokens; {CODEBOOK_CHAINS} disjoint \
                 length-{} codebook chains need {}",
                self.vocab_size,
                self.answer_len,
                CODEBOOK_CHAINS * per_chain
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Source distribution
// ---------------------------------------------------------------------------

/// Geometric decay of the global token-popularity ranking inside the
/// source model. Strong skew concentrates corpus mass on a few tokens, so
/// most bigrams stay rare enough to serve as recall keys while a band of
/// moderate-frequency bigrams keeps retention measurable.
pub const POPULARITY_DECAY: f64 = 0.7;

/// Fixed seeded order-2 Markov generator over the source alphabet. A
/// shuffled popularity ranking with geometric decay biases both the initial
/// tokens and every context's continuation set, and each context's
/// continuations carry geometrically decaying weights of their own.
#[derive(Debug, Clone)]
pub struct SourceModel {
    initial: Vec<(Token, f64)>,
    transitions: BTreeMap<(Token, Token), Vec<(Token, f64)>>,
}

/// Draws `k` distinct tokens by weight without replacement.
fn sample_distinct_weighted(
    pool: &[(Token, f64)],
    k: usize,
    rng: &mut impl Rng,
) -> Vec<Token> {
    let mut remaining = pool.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k.min(pool.len()) {
        let total: f64 = remaining.iter().map(|&(_, w)| w).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (i, &(_, w)) in remaining.iter().enumerate() {
            if u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        out.push(remaining.remove(pick).0);
    }
    out
}

impl SourceModel {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let tokens = cfg.source_tokens();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SOURCE_MODEL_SALT);

        let mut ranked = tokens.clone();
        ranked.shuffle(&mut rng);
        let raw: Vec<f64> = (0..ranked.len()).map(|i| POPULARITY_DECAY.powi(i as i32)).collect();
        let total: f64 = raw.iter().sum();
        let initial: Vec<(Token, f64)> =
            ranked.into_iter().zip(raw).map(|(t, w)| (t, w / total)).collect();

        let mut transitions = BTreeMap::new();
        for &a in &tokens {
            for &b in &tokens {
                let continuations =
                    sample_distinct_weighted(&initial, SOURCE_BRANCHING, &mut rng);
                let raw: Vec<f64> =
                    (0..continuations.len()).map(|i| 0.5f64.powi(i as i32)).collect();
                let total: f64 = raw.iter().sum();
                let dist: Vec<(Token, f64)> =
                    continuations.into_iter().zip(raw).map(|(t, w)| (t, w / total)).collect();
                transitions.insert((a, b), dist);
            }
        }
        Self { initial, transitions }
    }

    /// Distribution of each of the first two tokens of a sequence.
    pub fn initial_distribution(&self) -> &[(Token, f64)] {
        &self.initial
    }

    /// Next-token distribution after the ordered pair (a, b).
    pub fn continuations(&self, a: Token, b: Token) -> &[(Token, f64)] {
        &self.transitions[&(a, b)]
    }

    fn sample_from(dist: &[(Token, f64)], rng: &mut impl Rng) -> Token {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(t, p) in dist {
            acc += p;
            if u < acc {
                return t;
            }
        }
        dist.last().expect("nonempty distribution").0
    }

    /// One sequence of [`SOURCE_SEQ_LEN`] tokens: the first two drawn from
    /// the popularity distribution, the rest from the transition table.
    pub fn sample_sequence(&self, rng: &mut impl Rng) -> Vec<Token> {
        let mut seq = Vec::with_capacity(SOURCE_SEQ_LEN);
        while seq.len() < SOURCE_SEQ_LEN.min(2) {
            seq.push(Self::sample_from(&self.initial, rng));
        }
        while seq.len() < SOURCE_SEQ_LEN {
            let (a, b) = (seq[seq.len() - 2], seq[seq.len() - 1]);
            seq.push(Self::sample_from(self.continuations(a, b), rng));
        }
        seq
    }
}

/// Source corpus used to fit the starting policy; pure function of the
/// config.
pub fn gen_source_corpus(cfg: &ScenarioConfig) -> Vec<Vec<Token>> {
    let model = SourceModel::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ CORPUS_SALT);
    (0..cfg.source_corpus_size).map(|_| model.sample_sequence(&mut rng)).collect()
}

/// Held-out draw from the same source distribution on an independent
/// stream; one fifth of the corpus size, at least one sequence.
pub fn held_out_source(cfg: &ScenarioConfig) -> Vec<Vec<Token>> {
    let model = SourceModel::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ HELDOUT_SALT);
    let n = (cfg.source_corpus_size / 5).max(1);
    (0..n).map(|_| model.sample_sequence(&mut rng)).collect()
}

// ---------------------------------------------------------------------------
// Target dataset
// ---------------------------------------------------------------------------

/// One recall item: prompt (marker + key) and its ground-truth answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetItem {
    pub prompt: Vec<Token>,
    pub answer: Vec<Token>,
}

/// Which half of the key space a dataset holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A split-tagged list of recall items.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
    pub split: Split,
}

impl Dataset {
    /// Checks the structural invariants: nonempty answers, all tokens in
    /// range, no eos inside any answer.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for (i, item) in self.items.iter().enumerate() {
            if item.answer.is_empty() {
                return Err(Error::Scenario(format!("item {i}: empty answer")));
            }
            for &t in item.prompt.iter().chain(&item.answer) {
                if t >= vocab.size() {
                    return Err(Error::Scenario(format!(
                        "item {i}: token {t} out of range for vocab {}",
                        vocab.size()
                    )));
                }
            }
            if item.answer.contains(&vocab.eos()) {
                return Err(Error::Scenario(format!("item {i}: answer contains eos")));
            }
        }
        Ok(())
    }

    /// Writes one JSON object per line with keys "prompt" and "answer".
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a JSON-lines dataset written by [`Dataset::save_jsonl`].
    pub fn load_jsonl(path: &Path, split: Split) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut items = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            items.push(serde_json::from_str(line)?);
        }
        Ok(Self { items, split })
    }
}

/// Slot layout of a codebook value: doubled body symbols, an anchor reprise
/// on even lengths, and a terminal slot. Doubling keeps the distinct-symbol
/// count low while every length-2 context window inside prompt + value + eos
/// stays unique, so an order-2 policy can represent the value exactly.
fn answer_slots(len: usize) -> Vec<Option<usize>> {
    let mut slots: Vec<Option<usize>> = match len {
        0 | 1 => Vec::new(),
        2 => vec![Some(0)],
        3 => vec![Some(0), Some(0)],
        4 => vec![Some(0), Some(0), Some(1)],
        _ if len % 2 == 1 => (0..(len - 1) / 2).flat_map(|i| [Some(i), Some(i)]).collect(),
        _ => {
            let mut s: Vec<Option<usize>> =
                (0..(len - 2) / 2).flat_map(|i| [Some(i), Some(i)]).collect();
            s.push(Some(0));
            s
        }
    };
    slots.push(None);
    slots
}

/// One of [`CODEBOOK_CHAINS`] disjoint codebook values over the target
/// alphabet. A value walks doubled body tokens and terminates in an
/// entity-flagged token. Truncations lose the entire entity component;
/// recitations that skip one repeat keep the token set but leave room for a
/// junk substitute, whose entity flag then decides the score, so only
/// verbatim recall passes the final threshold reliably; and a junk-led
/// recitation pushes the terminal entity past the sampling budget.
fn chain_answer(cfg: &ScenarioConfig, vocab: &Vocabulary, chain: usize) -> Vec<Token> {
    let slots = answer_slots(cfg.answer_len);
    let body_need = slots.iter().filter_map(|s| *s).max().map_or(0, |m| m + 1);
    let (ent, plain): (Vec<Token>, Vec<Token>) =
        cfg.target_tokens().into_iter().partition(|&t| vocab.is_entity(t));
    let mut ent = VecDeque::from(ent);
    let mut plain = VecDeque::from(plain);
    let terminals: Vec<Token> = (0..CODEBOOK_CHAINS)
        .map(|_| ent.pop_front().or_else(|| plain.pop_back()).expect("target pool validated"))
        .collect();
    let mut bodies: Vec<Vec<Token>> = (0..CODEBOOK_CHAINS)
        .map(|_| {
            (0..body_need)
                .map(|_| plain.pop_front().or_else(|| ent.pop_front()).expect("target pool validated"))
                .collect()
        })
        .collect();
    let body = bodies.swap_remove(chain);
    slots.iter().map(|s| s.map_or(terminals[chain], |i| body[i])).collect()
}

/// Probability that `policy` samples exactly `answer` after `prompt`:
/// the product of next-token probabilities.
pub fn exact_answer_prob(policy: &Policy<f64>, prompt: &[Token], answer: &[Token]) -> f64 {
    let mut seq = prompt.to_vec();
    let mut logp = 0.0;
    for &t in answer {
        logp += policy.log_prob(&seq, t);
        seq.push(t);
    }
    logp.exp()
}

/// Builds disjoint train/test recall datasets whose answers the fitted
/// policy cannot plausibly sample.
///
/// Candidate keys pair any non-special first token with a source-half
/// second token, minus pairs whose source-corpus bigram count exceeds
/// [`HOT_BIGRAM_CAP`]. Warmest pairs under the cap are taken first (ties
/// in random order): fine-tuning on a key whose pair actually occurs in
/// source text suppresses a real continuation, which is what makes the
/// retention metric sensitive, while the cap keeps the pretrained row
/// diffuse enough for the answer's first token to be discoverable. Keys
/// longer than two tokens are left-padded with the marker; only the final
/// two tokens condition an order-2 policy. Each key's preferred chain
/// follows from its final token, so every key ending in the same token
/// shares one early answer row and ignition spreads across those keys; a
/// chain whose exact sampling probability under `pre` breaks
/// [`EXACT_ANSWER_PROB_BOUND`] falls through to the next, keys satisfying
/// no chain are skipped, and running out of candidates is an error.
pub fn gen_target_dataset(cfg: &ScenarioConfig, pre: &Policy<f64>) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    if pre.vocab().size() != cfg.vocab_size {
        return Err(Error::Mismatch(format!(
            "fitted policy vocab {} != scenario vocab {}",
            pre.vocab().size(),
            cfg.vocab_size
        )));
    }
    let marker = cfg.marker();
    let eos = 0;

    // Bigram counts over the fitting corpus, for the hot-key exclusion.
    let corpus = gen_source_corpus(cfg);
    let mut bigram_counts: BTreeMap<(Token, Token), u64> = BTreeMap::new();
    for seq in &corpus {
        for pair in seq.windows(2) {
            *bigram_counts.entry((pair[0], pair[1])).or_insert(0) += 1;
        }
    }

    // Candidate key cores (last two key tokens), deterministically shuffled.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TARGET_SALT);
    let second: Vec<Token> = cfg.source_tokens();
    let mut candidates: Vec<Vec<Token>> = Vec::new();
    if cfg.key_len == 1 {
        candidates.extend(second.iter().map(|&k| vec![k]));
    } else {
        let firsts: Vec<Token> = (0..cfg.vocab_size).filter(|&t| t != eos && t != marker).collect();
        for &k1 in &firsts {
            for &k2 in &second {
                if bigram_counts.get(&(k1, k2)).copied().unwrap_or(0) <= HOT_BIGRAM_CAP {
                    candidates.push(vec![k1, k2]);
                }
            }
        }
    }
    candidates.shuffle(&mut rng);
    candidates.sort_by_key(|core| {
        let n = core.len();
        let count = if n >= 2 {
            bigram_counts.get(&(core[n - 2], core[n - 1])).copied().unwrap_or(0)
        } else {
            0
        };
        std::cmp::Reverse(count)
    });

    let need = cfg.target_train_size + cfg.target_test_size;
    let mut items: Vec<DatasetItem> = Vec::with_capacity(need);
    for core in &candidates {
        if items.len() == need {
            break;
        }
        let mut prompt = vec![marker];
        prompt.extend(std::iter::repeat_n(marker, cfg.key_len.saturating_sub(core.len())));
        prompt.extend_from_slice(core);
        let first_chain = core[core.len() - 1] % CODEBOOK_CHAINS;
        let chosen = (0..CODEBOOK_CHAINS)
            .map(|i| (first_chain + i) % CODEBOOK_CHAINS)
            .find_map(|c| {
                let answer = chain_answer(cfg, pre.vocab(), c);
                (exact_answer_prob(pre, &prompt, &answer) < EXACT_ANSWER_PROB_BOUND)
                    .then_some(answer)
            });
        if let Some(answer) = chosen {
            items.push(DatasetItem { prompt, answer });
        }
    }
    if items.len() < need {
        return Err(Error::Scenario(format!(
            "only {} of {need} keys satisfy the answer-probability bound {EXACT_ANSWER_PROB_BOUND} \
             (candidate pool {}); enlarge the vocabulary or shrink the dataset sizes",
            items.len(),
            candidates.len()
        )));
    }
    items.shuffle(&mut rng);
    let test_items = items.split_off(cfg.target_train_size);
    Ok((
        Dataset { items, split: Split::Train },
        Dataset { items: test_items, split: Split::Test },
    ))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Samples `samples_per_item` free suffixes per item (no forced prefix),
/// scores each against the ground truth, and averages. Returns
/// (mean similarity, mean reward). Generation is granted exactly the
/// reference length as its budget, so the score measures content recall
/// rather than stopping behavior.
pub fn eval_target(
    theta: &Policy<f64>,
    data: &Dataset,
    spec: &RewardSpec<f64>,
    delta: f64,
    samples_per_item: usize,
    rng: &mut impl Rng,
) -> (f64, f64) {
    assert!(samples_per_item >= 1, "samples_per_item must be >= 1");
    assert!(!data.items.is_empty(), "eval_target: empty dataset");
    let eos = theta.vocab().eos();
    let mut sim_sum = 0.0;
    let mut reward_sum = 0.0;
    for item in &data.items {
        for _ in 0..samples_per_item {
            let (mut out, _) = theta.sample_suffix(&item.prompt, item.answer.len(), rng);
            if out.last() == Some(&eos) {
                out.pop();
            }
            let (sim, reward) = score_response(&out, &item.answer, spec, delta, theta.vocab());
            sim_sum += sim;
            reward_sum += reward;
        }
    }
    let n = (data.items.len() * samples_per_item) as f64;
    (sim_sum / n, reward_sum / n)
}

/// General-capability retention on held-out source text. Returns
/// (delta_loglik, mean_exact_kl): the mean per-token log-likelihood under
/// `theta` minus under `pre` (negative means degradation), and the mean
/// over visited context occurrences of the exact next-token KL(theta || pre).
pub fn eval_retention(
    theta: &Policy<f64>,
    pre: &Policy<f64>,
    held_out: &[Vec<Token>],
) -> (f64, f64) {
    assert!(!held_out.is_empty(), "eval_retention: empty held-out set");
    let mut delta_loglik = 0.0;
    let mut kl_sum = 0.0;
    let mut n_tokens = 0usize;
    for seq in held_out {
        for t in 0..seq.len() {
            let ctx = &seq[..t];
            delta_loglik += theta.log_prob(ctx, seq[t]) - pre.log_prob(ctx, seq[t]);
            kl_sum += theta.next_kl_row(pre, theta.context_id(ctx));
            n_tokens += 1;
        }
    }
    let n = n_tokens as f64;
    (delta_loglik / n, kl_sum / n)
}

// ---------------------------------------------------------------------------
// Scenario bundle
// ---------------------------------------------------------------------------

/// Everything a training run consumes: the fitted starting policy, the
/// target splits, and held-out source text for retention checks.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub vocab: Vocabulary,
    pub pre: Policy<f64>,
    pub train: Dataset,
    pub test: Dataset,
    pub held_out: Vec<Vec<Token>>,
}

/// Generates the corpus, fits the starting policy, and builds the target
/// datasets; pure function of the config.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let vocab = cfg.vocabulary()?;
    let corpus = gen_source_corpus(cfg);
    let pre = Policy::mle_fit(&corpus, cfg.policy_order, MLE_SMOOTHING, vocab.clone())?;
    let (train, test) = gen_target_dataset(cfg, &pre)?;
    train.validate(&vocab)?;
    test.validate(&vocab)?;
    let held_out = held_out_source(cfg);
    Ok(Scenario { config: cfg.clone(), vocab, pre, train, test, held_out })
}
