use std::collections::BTreeSet;

use crate::metrics::{stem, tokenize};

/// Scores how well a hypothesis is supported by its dialogue context.
pub trait PlausibilityScorer {
    fn name(&self) -> &str;

    /// A value in [0, 1].
    fn score(&self, hypothesis: &str, context: &str) -> f64;
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "am", "an", "and", "any", "are", "as", "at", "be", "because", "been",
    "before", "being", "but", "by", "can", "could", "did", "do", "does", "doing", "for", "from", "had", "has", "have",
    "having", "he", "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just",
    "me", "more", "most", "my", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our",
    "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that", "the", "their", "them",
    "then", "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was",
    "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you",
    "your", "'s", "'re", "'ll", "'ve", "'d", "'m", "n't",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Stems of alphanumeric, non-stopword tokens.
pub fn content_stems(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric) && !is_stopword(t))
        .map(|t| stem(&t))
        .collect()
}

/// Stemmed content-word recall of the hypothesis against the context. A
/// lexical placeholder for model-based entailment scorers.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalOverlapScorer;

impl PlausibilityScorer for LexicalOverlapScorer {
    fn name(&self) -> &str {
        "lexical_overlap"
    }

    fn score(&self, hypothesis: &str, context: &str) -> f64 {
        let hyp = content_stems(hypothesis);
        if hyp.is_empty() {
            return 0.0;
        }
        let ctx: BTreeSet<String> = content_stems(context).into_iter().collect();
        hyp.iter().filter(|s| ctx.contains(*s)).count() as f64 / hyp.len() as f64
    }
}
