//! Negative samples: dataset counterfactuals, non-optimal top-k generations,
//! masked-LM token replacement, and other answers from the same batch.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{
    generate, BackendError, Decode, MaskCondition, ModelBackend, TokenId, ToyBackend, TrainableBackend, Vocabulary,
};
use crate::corpus::{normalize_text, prepare_input, InferenceExample, TemplateId};
use crate::metrics::tokenize;
use crate::objective::{cl_sample_loss, cosine};

#[derive(Debug, Error)]
pub enum NegativeError {
    #[error("example `{id}` has {available} counterfactuals, {requested} requested")]
    NotEnoughCounterfactuals { id: String, available: usize, requested: usize },
    #[error("m must be at least 1")]
    ZeroM,
    #[error("in-batch negatives need a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid replacement config: {0}")]
    BadConfig(String),
    #[error("example `{0}` has an empty answer")]
    EmptyAnswer(String),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub type Result<T> = std::result::Result<T, NegativeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Counterfactual,
    NonOptimal,
    ReplaceZs,
    ReplaceMcq,
    InBatch,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Counterfactual,
        Strategy::NonOptimal,
        Strategy::ReplaceZs,
        Strategy::ReplaceMcq,
        Strategy::InBatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Counterfactual => "counterfactual",
            Strategy::NonOptimal => "non_optimal",
            Strategy::ReplaceZs => "replace_zs",
            Strategy::ReplaceMcq => "replace_mcq",
            Strategy::InBatch => "in_batch",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = NegativeError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| NegativeError::UnknownStrategy(s.to_string()))
    }
}

/// Enough information to replay one negative (or one dropped slot).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    /// Counterfactual index or batch index the negative was taken from.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_id: Option<String>,
    /// Seeds tried, in order; the last one produced the negative unless dropped.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub attempt_seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rejected: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub replaced_positions: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deltas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fallback: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegativeSet {
    pub example_id: String,
    pub strategy: Strategy,
    pub negatives: Vec<String>,
    /// One record per entry of `negatives`.
    pub provenance: Vec<Provenance>,
    /// Slots that produced no usable negative.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<Provenance>,
}

impl NegativeSet {
    fn empty(example_id: &str, strategy: Strategy) -> Self {
        NegativeSet {
            example_id: example_id.to_string(),
            strategy,
            negatives: Vec::new(),
            provenance: Vec::new(),
            dropped: Vec::new(),
        }
    }
}

/// Per-example seed, independent of the order in which examples are visited.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// `m` of the stored counterfactuals; all of them, in order, when `m` equals
/// the number available, otherwise a seeded sample kept in stored order.
pub fn pick_counterfactuals(example: &InferenceExample, m: usize, seed: u64) -> Result<NegativeSet> {
    if m == 0 {
        return Err(NegativeError::ZeroM);
    }
    let available = example.counterfactuals.len();
    if available < m {
        return Err(NegativeError::NotEnoughCounterfactuals {
            id: example.id.clone(),
            available,
            requested: m,
        });
    }
    let s = derive_seed(seed, &example.id);
    let mut chosen: Vec<usize> = if m == available {
        (0..m).collect()
    } else {
        sample(&mut ChaCha8Rng::seed_from_u64(s), available, m).into_vec()
    };
    chosen.sort_unstable();
    let mut set = NegativeSet::empty(&example.id, Strategy::Counterfactual);
    for i in chosen {
        set.negatives.push(example.counterfactuals[i].clone());
        set.provenance.push(Provenance {
            seed: Some(s),
            source_index: Some(i),
            ..Provenance::default()
        });
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonOptimalConfig {
    pub m: usize,
    pub k: usize,
    pub attempts: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for NonOptimalConfig {
    fn default() -> Self {
        NonOptimalConfig {
            m: 4,
            k: 10,
            attempts: 5,
            max_len: 32,
            seed: 0,
        }
    }
}

/// `m` top-k samples from `backend`; samples equal to gold or empty are
/// redrawn up to `attempts` times, after which the slot is dropped.
pub fn generate_nonoptimal<B: ModelBackend + ?Sized>(
    backend: &B,
    example: &InferenceExample,
    template: TemplateId,
    cfg: &NonOptimalConfig,
) -> Result<NegativeSet> {
    if cfg.m == 0 {
        return Err(NegativeError::ZeroM);
    }
    let vocab = backend.vocab();
    let k = cfg.k.min(vocab.num_emittable());
    let input = vocab.encode(&prepare_input(example, template).text);
    let gold_tokens = tokenize(&example.answer);
    let gold_norm = normalize_text(&example.answer);
    let base = derive_seed(cfg.seed, &example.id);
    let mut set = NegativeSet::empty(&example.id, Strategy::NonOptimal);
    for slot in 0..cfg.m {
        let mut prov = Provenance::default();
        let mut accepted = None;
        for attempt in 0..cfg.attempts.max(1) {
            let s = derive_seed(base, &format!("{slot}:{attempt}"));
            prov.attempt_seeds.push(s);
            let ids = generate(backend, &input, Decode::TopK { k, seed: s }, cfg.max_len)?;
            let text = vocab.decode(&ids);
            let tokens: Vec<&str> = ids.iter().map(|&t| vocab.token(t)).collect();
            if text.is_empty() || tokens == gold_tokens || normalize_text(&text) == gold_norm {
                prov.rejected.push(text);
                continue;
            }
            accepted = Some(text);
            break;
        }
        match accepted {
            Some(text) => {
                set.negatives.push(text);
                set.provenance.push(prov);
            }
            None => set.dropped.push(prov),
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplaceMode {
    /// The scorer as given.
    Zs,
    /// A scorer fine-tuned to pick gold over counterfactuals.
    Mcq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplaceConfig {
    pub threshold: f64,
    pub k: usize,
    pub mode: ReplaceMode,
    /// Negatives drawn per example; all share the selected positions.
    pub m: usize,
    pub seed: u64,
}

impl Default for ReplaceConfig {
    fn default() -> Self {
        ReplaceConfig {
            threshold: 0.75,
            k: 10,
            mode: ReplaceMode::Zs,
            m: 1,
            seed: 0,
        }
    }
}

impl ReplaceConfig {
    pub fn validate(&self, vocab_len: usize) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(NegativeError::BadConfig(format!("threshold must be positive, got {}", self.threshold)));
        }
        if self.k == 0 || self.k > vocab_len {
            return Err(NegativeError::BadConfig(format!("k must be in 1..={vocab_len}, got {}", self.k)));
        }
        if self.m == 0 {
            return Err(NegativeError::ZeroM);
        }
        Ok(())
    }
}

/// |log p(a_j | X, A without j) - log p(a_j | A without j)| for every answer position.
pub fn context_deltas<B: ModelBackend + ?Sized>(scorer: &B, input: &[TokenId], answer: &[TokenId]) -> Result<Vec<f64>> {
    if !scorer.capabilities().masked_logits {
        return Err(BackendError::MissingCapability("masked_logits").into());
    }
    (0..answer.len())
        .map(|j| {
            let with = scorer.masked_log_probs(answer, j, MaskCondition::WithContext(input))?;
            let without = scorer.masked_log_probs(answer, j, MaskCondition::AnswerOnly)?;
            let a = answer[j] as usize;
            Ok((with[a] - without[a]).abs())
        })
        .collect()
}

/// Positions whose delta exceeds `threshold`, or the first position of
/// maximal delta when none does. The flag reports the fallback.
pub fn select_positions(deltas: &[f64], threshold: f64) -> (Vec<usize>, bool) {
    let s: Vec<usize> = (0..deltas.len()).filter(|&j| deltas[j] > threshold).collect();
    if !s.is_empty() || deltas.is_empty() {
        return (s, false);
    }
    let mut best = 0;
    for (j, d) in deltas.iter().enumerate() {
        if *d > deltas[best] {
            best = j;
        }
    }
    (vec![best], true)
}

/// Replacement candidates for position `j`: the top-k non-special tokens of
/// the answer-only distribution without the gold token, or the (k+1)-th
/// token if gold was the only one.
pub fn replacement_candidates<B: ModelBackend + ?Sized>(
    scorer: &B,
    answer: &[TokenId],
    j: usize,
    k: usize,
) -> Result<Vec<TokenId>> {
    let lp = scorer.masked_log_probs(answer, j, MaskCondition::AnswerOnly)?;
    let ranked: Vec<TokenId> = crate::backend::ranked(&lp)
        .into_iter()
        .filter(|&t| !Vocabulary::is_special(t))
        .collect();
    let gold = answer[j];
    let mut c: Vec<TokenId> = ranked.iter().take(k).copied().filter(|&t| t != gold).collect();
    if c.is_empty() {
        match ranked.get(k) {
            Some(&t) => c.push(t),
            None => {
                return Err(NegativeError::BadConfig(
                    "vocabulary has no non-gold replacement token".into(),
                ))
            }
        }
    }
    Ok(c)
}

/// Masked-LM token replacement; each negative keeps the gold token count and
/// differs from gold exactly at the selected positions.
pub fn token_replace<B: ModelBackend + ?Sized>(
    scorer: &B,
    example: &InferenceExample,
    template: TemplateId,
    cfg: &ReplaceConfig,
) -> Result<NegativeSet> {
    let vocab = scorer.vocab();
    cfg.validate(vocab.len())?;
    let gold_tokens = tokenize(&example.answer);
    if gold_tokens.is_empty() {
        return Err(NegativeError::EmptyAnswer(example.id.clone()));
    }
    let answer: Vec<TokenId> = gold_tokens.iter().map(|t| vocab.id(t)).collect();
    let input = vocab.encode(&prepare_input(example, template).text);
    let deltas = context_deltas(scorer, &input, &answer)?;
    let (positions, fallback) = select_positions(&deltas, cfg.threshold);
    let candidates = positions
        .iter()
        .map(|&j| replacement_candidates(scorer, &answer, j, cfg.k))
        .collect::<Result<Vec<_>>>()?;

    let strategy = match cfg.mode {
        ReplaceMode::Zs => Strategy::ReplaceZs,
        ReplaceMode::Mcq => Strategy::ReplaceMcq,
    };
    let base = derive_seed(cfg.seed, &example.id);
    let mut set = NegativeSet::empty(&example.id, strategy);
    for slot in 0..cfg.m {
        let s = derive_seed(base, &slot.to_string());
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut tokens: Vec<&str> = gold_tokens.iter().map(String::as_str).collect();
        for (&j, c) in positions.iter().zip(&candidates) {
            tokens[j] = vocab.token(c[rng.gen_range(0..c.len())]);
        }
        set.negatives.push(tokens.join(" "));
        set.provenance.push(Provenance {
            seed: Some(s),
            replaced_positions: Some(positions.clone()),
            deltas: Some(deltas.clone()),
            fallback: Some(fallback),
            ..Provenance::default()
        });
    }
    Ok(set)
}

/// Gold answers of every other batch member, in batch order.
pub fn inbatch_negatives(batch: &[InferenceExample], i: usize) -> Result<NegativeSet> {
    if batch.len() < 2 {
        return Err(NegativeError::BatchTooSmall(batch.len()));
    }
    let mut set = NegativeSet::empty(&batch[i].id, Strategy::InBatch);
    for (j, e) in batch.iter().enumerate().filter(|(j, _)| *j != i) {
        set.negatives.push(e.answer.clone());
        set.provenance.push(Provenance {
            source_index: Some(j),
            source_id: Some(e.id.clone()),
            ..Provenance::default()
        });
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McqConfig {
    pub epochs: usize,
    pub lr: f64,
    pub tau: f64,
}

impl Default for McqConfig {
    fn default() -> Self {
        McqConfig {
            epochs: 30,
            lr: 0.5,
            tau: 2.5,
        }
    }
}

fn mcq_items(vocab: &Vocabulary, examples: &[InferenceExample], template: TemplateId) -> Vec<(Vec<TokenId>, Vec<TokenId>, Vec<Vec<TokenId>>)> {
    examples
        .iter()
        .filter(|e| !e.counterfactuals.is_empty())
        .map(|e| {
            (
                vocab.encode(&prepare_input(e, template).text),
                vocab.encode(&e.answer),
                e.counterfactuals.iter().map(|c| vocab.encode(c)).collect(),
            )
        })
        .collect()
}

/// Fraction of examples whose gold answer is the choice closest to the input.
pub fn mcq_accuracy<B: ModelBackend + ?Sized>(scorer: &B, examples: &[InferenceExample], template: TemplateId) -> f64 {
    let items = mcq_items(scorer.vocab(), examples, template);
    if items.is_empty() {
        return 0.0;
    }
    let correct = items
        .iter()
        .filter(|(x, a, negs)| {
            let hx = scorer.embed_text(x).vector;
            let gold = cosine(&hx, &scorer.embed_text(a).vector);
            negs.iter().all(|n| cosine(&hx, &scorer.embed_text(n).vector) < gold)
        })
        .count();
    correct as f64 / items.len() as f64
}

/// Full-batch gradient descent on the per-sample contrastive loss with the
/// stored counterfactuals as choices; the result scores `replace_mcq`.
pub fn fit_mcq_scorer(base: &ToyBackend, examples: &[InferenceExample], template: TemplateId, cfg: &McqConfig) -> Result<ToyBackend> {
    let mut model = base.clone();
    let items = mcq_items(model.vocab(), examples, template);
    if items.is_empty() {
        return Ok(model);
    }
    let w = 1.0 / items.len() as f64;
    for _ in 0..cfg.epochs {
        let mut grads = model.zero_grads();
        for (x, a, negs) in &items {
            let hx = model.embed_text(x).vector;
            let ha = model.embed_text(a).vector;
            let hn: Vec<Vec<f64>> = negs.iter().map(|n| model.embed_text(n).vector).collect();
            let Ok(l) = cl_sample_loss(&hx, &ha, &hn, cfg.tau) else {
                continue;
            };
            let scale = |v: &[f64]| v.iter().map(|g| g * w).collect::<Vec<f64>>();
            model.embed_backward(x, &scale(&l.grad_anchor), &mut grads);
            model.embed_backward(a, &scale(&l.grad_positive), &mut grads);
            for (n, g) in negs.iter().zip(&l.grad_negatives) {
                model.embed_backward(n, &scale(g), &mut grads);
            }
        }
        model.apply_gradients(&grads, cfg.lr)?;
    }
    Ok(model)
}
