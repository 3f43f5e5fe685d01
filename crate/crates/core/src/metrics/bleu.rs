use std::collections::HashMap;

use super::{ngrams, MetricsError, Result, TokenSequence};

/// Clipped n-gram statistics, additive over a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuCounts {
    /// Clipped matches per order (index 0 is unigrams).
    pub matches: [usize; 4],
    /// Hypothesis n-gram totals per order.
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuCounts {
    pub fn of_pair(hyp: &[String], reference: &[String], max_n: usize) -> Self {
        let mut c = BleuCounts {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=max_n {
            let mut ref_counts: HashMap<String, usize> = HashMap::new();
            for g in ngrams(reference, n) {
                *ref_counts.entry(g).or_default() += 1;
            }
            let mut hyp_counts: HashMap<String, usize> = HashMap::new();
            for g in ngrams(hyp, n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            c.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            c.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &cnt)| cnt.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        c
    }

    pub fn add(&mut self, other: &BleuCounts) {
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// BLEU-n for n = 1..=max_n. A zero precision at any order yields 0.
    pub fn scores(&self, max_n: usize) -> Vec<f64> {
        let bp = self.brevity_penalty();
        (1..=max_n)
            .map(|n| {
                let mut log_sum = 0.0;
                for j in 0..n {
                    if self.matches[j] == 0 || self.totals[j] == 0 {
                        return 0.0;
                    }
                    log_sum += (self.matches[j] as f64 / self.totals[j] as f64).ln();
                }
                bp * (log_sum / n as f64).exp()
            })
            .collect()
    }
}

fn check_order(max_n: usize) -> Result<()> {
    if (1..=4).contains(&max_n) {
        Ok(())
    } else {
        Err(MetricsError::BadOrder(max_n))
    }
}

/// Corpus BLEU-1..=max_n with counts aggregated before the geometric mean.
pub fn corpus_bleu(hyps: &[TokenSequence], refs: &[TokenSequence], max_n: usize) -> Result<Vec<f64>> {
    check_order(max_n)?;
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut total = BleuCounts::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&BleuCounts::of_pair(h, r, max_n));
    }
    Ok(total.scores(max_n))
}

pub fn sentence_bleu(hyp: &TokenSequence, reference: &TokenSequence, max_n: usize) -> Result<Vec<f64>> {
    check_order(max_n)?;
    Ok(BleuCounts::of_pair(hyp, reference, max_n).scores(max_n))
}
