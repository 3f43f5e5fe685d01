//! Model contract consumed by the objective, negative samplers and trainer,
//! plus [`ToyBackend`], a small mean-pooled bag-of-tokens model with exact
//! hand-derived gradients.

mod checkpoint;
mod decode;
mod toy;

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::metrics::tokenize;

pub use checkpoint::{ToyCheckpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use decode::{generate, Decode};
pub(crate) use decode::ranked;
pub use toy::{ToyBackend, DEFAULT_INIT_SCALE};

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("position {position} out of range for {len} tokens")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("top-k requires 1 <= k <= {vocab}, got {k}")]
    BadTopK { k: usize, vocab: usize },
    #[error("max_len must be at least 1")]
    BadMaxLen,
    #[error("gradient has {got} entries, parameters have {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("backend lacks capability `{0}`")]
    MissingCapability(&'static str),
    #[error("checkpoint io on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, BackendError>;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const MASK: TokenId = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<mask>"];

/// Dense token <-> id map; the five specials occupy ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Specials followed by every token of `texts` in sorted order.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().filter(|w| !SPECIAL_TOKENS.contains(&w.as_str())))
            .collect();
        Self::from_tokens(tokens).expect("constructed vocabulary is valid")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(BackendError::Vocabulary(
                "special tokens must occupy ids 0..5 in order".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(BackendError::Vocabulary(format!("empty token at id {i}")));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(BackendError::Vocabulary(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    /// Tokens a decoder may emit: EOS plus every non-special token.
    pub fn num_emittable(&self) -> usize {
        self.tokens.len() - SPECIAL_TOKENS.len() + 1
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// Tokenizes and maps to ids; out-of-vocabulary words become UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined surface form; PAD/BOS/EOS/MASK are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS | MASK))
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub next_token_log_probs: bool,
    pub embed_text: bool,
    pub masked_logits: bool,
    pub trainable: bool,
}

/// A pooled text representation. `degenerate` marks the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub degenerate: bool,
}

/// Which window a masked-token prediction may read.
#[derive(Debug, Clone, Copy)]
pub enum MaskCondition<'a> {
    WithContext(&'a [TokenId]),
    AnswerOnly,
}

/// Scoring, embedding and masked prediction over a fixed vocabulary.
pub trait ModelBackend {
    fn vocab(&self) -> &Vocabulary;

    fn capabilities(&self) -> Capabilities;

    fn dim(&self) -> usize;

    /// log p(. | prefix, input) over the vocabulary.
    fn next_token_log_probs(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64>;

    fn embed_text(&self, tokens: &[TokenId]) -> Embedding;

    /// Log-distribution for `tokens[position]` with that position masked.
    fn masked_log_probs(&self, tokens: &[TokenId], position: usize, condition: MaskCondition<'_>) -> Result<Vec<f64>>;

    /// -sum_j log p(answer_j | answer_<j, input).
    fn sequence_nll(&self, input: &[TokenId], answer: &[TokenId]) -> f64 {
        (0..answer.len())
            .map(|j| -self.next_token_log_probs(input, &answer[..j])[answer[j] as usize])
            .sum()
    }
}

/// Flat gradient buffer laid out like the backend's parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<f64>);

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Gradients(vec![0.0; len])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Gradients(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        debug_assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// A backend whose parameters can be read, differentiated and updated.
pub trait TrainableBackend: ModelBackend {
    fn num_params(&self) -> usize;

    fn param(&self, index: usize) -> f64;

    fn set_param(&mut self, index: usize, value: f64);

    /// Human-readable name such as `E[12,3]`.
    fn param_label(&self, index: usize) -> String;

    fn zero_grads(&self) -> Gradients {
        Gradients::zeros(self.num_params())
    }

    /// Returns the sequence NLL and adds `scale` times its gradient.
    fn sequence_nll_with_grad(&self, input: &[TokenId], answer: &[TokenId], scale: f64, grads: &mut Gradients) -> f64;

    /// Adds the vector-Jacobian product of `embed_text(tokens)` with `upstream`.
    fn embed_backward(&self, tokens: &[TokenId], upstream: &[f64], grads: &mut Gradients);

    /// theta <- theta - lr * grad.
    fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()>;
}

pub(crate) fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    for z in logits.iter_mut() {
        *z -= lse;
    }
}

pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}
