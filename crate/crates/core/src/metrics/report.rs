use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{meteor_lite, rouge_l, BleuCounts, CiderScorer, MetricsError, Result, TokenSequence};

/// One hypothesis/reference pair to score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub id: String,
    pub hypothesis: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub id: String,
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: Option<f64>,
}

/// Corpus scores, optionally with per-example scores and per-stratum
/// sub-reports. `cider` is `None` when the scored subset has fewer than two
/// distinct references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    /// BLEU-n keyed by n.
    pub bleu: BTreeMap<u8, f64>,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_example: Vec<ExampleScores>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<String, MetricReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn score_subset(pairs: &[&ScoredPair], with_examples: bool) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let hyps: Vec<TokenSequence> = pairs.iter().map(|p| TokenSequence::from_text(&p.hypothesis)).collect();
    let refs: Vec<TokenSequence> = pairs.iter().map(|p| TokenSequence::from_text(&p.reference)).collect();
    let mut warnings = Vec::new();

    let mut counts = BleuCounts::default();
    let mut per_example = Vec::with_capacity(pairs.len());
    let cider_scorer = match CiderScorer::new(&refs) {
        Ok(s) => Some(s),
        Err(e) => {
            warnings.push(format!("cider undefined: {e}"));
            None
        }
    };
    let (mut meteor_sum, mut rouge_sum, mut cider_sum) = (0.0, 0.0, 0.0);
    for ((p, h), r) in pairs.iter().zip(&hyps).zip(&refs) {
        if h.is_empty() || r.is_empty() {
            warnings.push(format!("`{}` has an empty hypothesis or reference", p.id));
        }
        let c = BleuCounts::of_pair(h, r, 4);
        counts.add(&c);
        let meteor = meteor_lite(h, r);
        let rouge = rouge_l(h, r);
        let cider = cider_scorer.as_ref().map(|s| s.score(h, r));
        meteor_sum += meteor;
        rouge_sum += rouge;
        cider_sum += cider.unwrap_or(0.0);
        if with_examples {
            let s = c.scores(4);
            per_example.push(ExampleScores {
                id: p.id.clone(),
                bleu: [s[0], s[1], s[2], s[3]],
                meteor,
                rouge_l: rouge,
                cider,
            });
        }
    }
    let n = pairs.len() as f64;
    let bleu = counts
        .scores(4)
        .into_iter()
        .enumerate()
        .map(|(i, s)| (i as u8 + 1, s))
        .collect();
    Ok(MetricReport {
        count: pairs.len(),
        bleu,
        meteor: meteor_sum / n,
        rouge_l: rouge_sum / n,
        cider: cider_scorer.map(|_| cider_sum / n),
        per_example,
        strata: BTreeMap::new(),
        warnings,
    })
}

/// Scores the corpus; with `strata_labels` (id -> label) also scores each
/// labelled subset on its own. Ids without a label belong to no stratum.
pub fn score_corpus(
    pairs: &[ScoredPair],
    strata_labels: Option<&BTreeMap<String, String>>,
    per_example: bool,
) -> Result<MetricReport> {
    let all: Vec<&ScoredPair> = pairs.iter().collect();
    let mut report = score_subset(&all, per_example)?;
    if let Some(labels) = strata_labels {
        for id in labels.keys() {
            if !pairs.iter().any(|p| &p.id == id) {
                return Err(MetricsError::UnknownId(id.clone()));
            }
        }
        let mut groups: BTreeMap<&str, Vec<&ScoredPair>> = BTreeMap::new();
        for p in pairs {
            if let Some(label) = labels.get(&p.id) {
                groups.entry(label).or_default().push(p);
            }
        }
        for (label, subset) in groups {
            report
                .strata
                .insert(label.to_string(), score_subset(&subset, false)?);
        }
    }
    Ok(report)
}
