use std::collections::{BTreeMap, HashMap, HashSet};

use super::{ngrams, MetricsError, Result, TokenSequence};

const MAX_N: usize = 4;

/// CIDEr with document frequencies taken from a reference corpus.
///
/// n-grams are built over Porter stems. idf(g) = ln(|docs| / max(df(g), 1)),
/// so n-grams absent from every reference still weigh in the hypothesis norm.
/// Each order contributes 10 x cosine(hyp, ref) and the score is the mean
/// over orders 1..=4; an all-zero vector scores 0 at that order.
#[derive(Debug, Clone)]
pub struct CiderScorer {
    num_docs: f64,
    doc_freq: [HashMap<String, usize>; MAX_N],
}

impl CiderScorer {
    pub fn new(references: &[TokenSequence]) -> Result<Self> {
        let distinct: HashSet<&[String]> = references.iter().map(|r| &r[..]).collect();
        if distinct.len() < 2 {
            return Err(MetricsError::DegenerateIdf(distinct.len()));
        }
        let mut doc_freq: [HashMap<String, usize>; MAX_N] = Default::default();
        for r in references {
            let stems = r.stems();
            for (n, df) in doc_freq.iter_mut().enumerate() {
                let unique: HashSet<String> = ngrams(&stems, n + 1).collect();
                for g in unique {
                    *df.entry(g).or_default() += 1;
                }
            }
        }
        Ok(CiderScorer {
            num_docs: references.len() as f64,
            doc_freq,
        })
    }

    fn idf(&self, n: usize, g: &str) -> f64 {
        let df = self.doc_freq[n].get(g).copied().unwrap_or(0).max(1);
        (self.num_docs / df as f64).ln()
    }

    fn vector(&self, stems: &[String], n: usize) -> BTreeMap<String, f64> {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for g in ngrams(stems, n + 1) {
            *counts.entry(g).or_default() += 1.0;
        }
        for (g, w) in counts.iter_mut() {
            *w *= self.idf(n, g);
        }
        counts
    }

    pub fn score_order(&self, hyp: &TokenSequence, reference: &TokenSequence, n: usize) -> f64 {
        let vh = self.vector(&hyp.stems(), n - 1);
        let vr = self.vector(&reference.stems(), n - 1);
        let norm = |v: &BTreeMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
        let (nh, nr) = (norm(&vh), norm(&vr));
        if nh == 0.0 || nr == 0.0 {
            return 0.0;
        }
        let dot: f64 = vh.iter().filter_map(|(g, w)| vr.get(g).map(|x| w * x)).sum();
        10.0 * dot / (nh * nr)
    }

    pub fn score(&self, hyp: &TokenSequence, reference: &TokenSequence) -> f64 {
        (1..=MAX_N).map(|n| self.score_order(hyp, reference, n)).sum::<f64>() / MAX_N as f64
    }
}

/// Corpus CIDEr (mean over pairs) with the references as idf corpus; also
/// returns per-pair scores.
pub fn cider(hyps: &[TokenSequence], refs: &[TokenSequence]) -> Result<(f64, Vec<f64>)> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let scorer = CiderScorer::new(refs)?;
    let per: Vec<f64> = hyps.iter().zip(refs).map(|(h, r)| scorer.score(h, r)).collect();
    Ok((per.iter().sum::<f64>() / per.len() as f64, per))
}
