//! Corpus evaluation: tokenizer, Porter stemmer, BLEU-1..4, ROUGE-L,
//! METEOR-lite (exact + stem stages) and CIDEr over stems.

mod bleu;
mod cider;
mod meteor;
pub mod porter;
mod report;
mod rouge;
mod tokenize;

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{corpus_bleu, sentence_bleu, BleuCounts};
pub use cider::{cider, CiderScorer};
pub use meteor::{align, meteor_lite, Alignment, METEOR_ALPHA, METEOR_BETA, METEOR_GAMMA};
pub use porter::stem;
pub use report::{score_corpus, ExampleScores, MetricReport, ScoredPair};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};
pub use tokenize::tokenize;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("hypothesis count {hyps} does not match reference count {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("max_n must be in 1..=4, got {0}")]
    BadOrder(usize),
    #[error("idf corpus has {0} distinct reference document(s); provide a corpus of at least 2")]
    DegenerateIdf(usize),
    #[error("stratum label refers to unknown id `{0}`")]
    UnknownId(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Lowercase word tokens of one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn from_text(text: &str) -> Self {
        TokenSequence(tokenize(text))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        TokenSequence(tokens)
    }

    pub fn stems(&self) -> Vec<String> {
        self.0.iter().map(|t| stem(t)).collect()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl Deref for TokenSequence {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

/// n-grams of `tokens` joined with a space (tokens never contain whitespace).
pub(crate) fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = String> + '_ {
    tokens.windows(n).map(|w| w.join(" "))
}
