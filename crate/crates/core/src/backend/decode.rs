use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, ModelBackend, Result, TokenId, Vocabulary, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Decode {
    /// Argmax with lowest-id tie-break.
    Greedy,
    /// Sample from the renormalized k most probable tokens.
    TopK { k: usize, seed: u64 },
}

/// Tokens ordered by descending log-probability, ties by ascending id.
pub(crate) fn ranked(log_probs: &[f64]) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..log_probs.len() as TokenId).collect();
    ids.sort_by(|&a, &b| log_probs[b as usize].total_cmp(&log_probs[a as usize]).then(a.cmp(&b)));
    ids
}

/// Decodes until EOS (not included in the output) or `max_len` tokens.
/// Only EOS and non-special tokens can be emitted.
pub fn generate<B: ModelBackend + ?Sized>(
    backend: &B,
    input: &[TokenId],
    decode: Decode,
    max_len: usize,
) -> Result<Vec<TokenId>> {
    if max_len == 0 {
        return Err(BackendError::BadMaxLen);
    }
    let vocab = backend.vocab().num_emittable();
    let mut rng = match decode {
        Decode::TopK { k, seed } => {
            if k == 0 || k > vocab {
                return Err(BackendError::BadTopK { k, vocab });
            }
            Some(ChaCha8Rng::seed_from_u64(seed))
        }
        Decode::Greedy => None,
    };
    let mut out = Vec::new();
    while out.len() < max_len {
        let lp = backend.next_token_log_probs(input, &out);
        let order: Vec<TokenId> = ranked(&lp)
            .into_iter()
            .filter(|&t| t == EOS || !Vocabulary::is_special(t))
            .collect();
        let next = match (decode, rng.as_mut()) {
            (Decode::TopK { k, .. }, Some(rng)) => {
                let top = &order[..k];
                let max = lp[top[0] as usize];
                let weights: Vec<f64> = top.iter().map(|&t| (lp[t as usize] - max).exp()).collect();
                let dist = WeightedIndex::new(&weights).expect("top-k weights are positive");
                top[dist.sample(rng)]
            }
            _ => order[0],
        };
        if next == EOS {
            break;
        }
        out.push(next);
    }
    Ok(out)
}
