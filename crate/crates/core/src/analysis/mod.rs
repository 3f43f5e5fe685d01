//! Pairwise human-judgment analytics (win/tie/lose, winning rate, Fleiss
//! kappa, paired t-tests), stratified by difficulty or question type.

mod plausibility;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plausibility::{content_stems, is_stopword, LexicalOverlapScorer, PlausibilityScorer};
pub use stats::{
    ln_gamma, paired_ttest, regularized_incomplete_beta, student_t_cdf, student_t_two_sided, TTest,
};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("rater `{rater}` judged item `{item}` twice")]
    DuplicateJudgment { item: String, rater: String },
    #[error("item `{item}` has {got} judgments, expected {expected}")]
    IncompleteCoverage { item: String, expected: usize, got: usize },
    #[error("no judgments")]
    Empty,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("need at least 2 raters per item, got {0}")]
    TooFewRaters(usize),
    #[error("rows of the count table have different totals")]
    RaggedCounts,
    #[error("item `{0}` has no stratum label")]
    Unlabeled(String),
    #[error("item `{0}` is missing from one of the score series")]
    MissingScore(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    #[serde(rename = "option_1")]
    Option1,
    #[serde(rename = "option_2")]
    Option2,
    Both,
    Neither,
}

impl Choice {
    pub const ALL: [Choice; 4] = [Choice::Option1, Choice::Option2, Choice::Both, Choice::Neither];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "option_1")]
    Option1,
    #[serde(rename = "option_2")]
    Option2,
}

impl Side {
    fn choice(self) -> Choice {
        match self {
            Side::Option1 => Choice::Option1,
            Side::Option2 => Choice::Option2,
        }
    }

    fn other(self) -> Side {
        match self {
            Side::Option1 => Side::Option2,
            Side::Option2 => Side::Option1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Judgment {
    pub item_id: String,
    pub rater_id: String,
    pub choice: Choice,
}

/// Choices per item in rater-id order, after coverage checks.
fn group(judgments: &[Judgment]) -> Result<BTreeMap<String, Vec<Choice>>> {
    if judgments.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut by_item: BTreeMap<&str, BTreeMap<&str, Choice>> = BTreeMap::new();
    for j in judgments {
        if by_item
            .entry(&j.item_id)
            .or_default()
            .insert(&j.rater_id, j.choice)
            .is_some()
        {
            return Err(AnalysisError::DuplicateJudgment {
                item: j.item_id.clone(),
                rater: j.rater_id.clone(),
            });
        }
    }
    let expected = by_item.values().map(BTreeMap::len).max().unwrap_or(0);
    for (item, raters) in &by_item {
        if raters.len() != expected {
            return Err(AnalysisError::IncompleteCoverage {
                item: item.to_string(),
                expected,
                got: raters.len(),
            });
        }
    }
    Ok(by_item
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.into_values().collect()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    /// One outcome per item: the side with a strict majority of votes wins;
    /// anything else is a tie.
    Majority,
    /// Every judgment counts on its own; both/neither are ties.
    PerJudgment,
}

impl fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationRule::Majority => "majority",
            AggregationRule::PerJudgment => "per_judgment",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinTieLose {
    pub win: f64,
    pub tie: f64,
    pub lose: f64,
    /// Items (majority) or judgments (per-judgment) counted.
    pub count: usize,
    pub rule: AggregationRule,
}

fn percentages(w: usize, t: usize, l: usize, rule: AggregationRule) -> WinTieLose {
    let n = (w + t + l) as f64;
    WinTieLose {
        win: 100.0 * w as f64 / n,
        tie: 100.0 * t as f64 / n,
        lose: 100.0 * l as f64 / n,
        count: w + t + l,
        rule,
    }
}

pub fn win_tie_lose(judgments: &[Judgment], side: Side, rule: AggregationRule) -> Result<WinTieLose> {
    let items = group(judgments)?;
    let (mine, theirs) = (side.choice(), side.other().choice());
    let (mut w, mut t, mut l) = (0, 0, 0);
    for choices in items.values() {
        match rule {
            AggregationRule::Majority => {
                let half = choices.len() as f64 / 2.0;
                let count = |c: Choice| choices.iter().filter(|&&x| x == c).count() as f64;
                if count(mine) > half {
                    w += 1;
                } else if count(theirs) > half {
                    l += 1;
                } else {
                    t += 1;
                }
            }
            AggregationRule::PerJudgment => {
                for &c in choices {
                    if c == mine {
                        w += 1;
                    } else if c == theirs {
                        l += 1;
                    } else {
                        t += 1;
                    }
                }
            }
        }
    }
    Ok(percentages(w, t, l, rule))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinningRate {
    pub rate: f64,
    /// Per-item mean score, in item-id order.
    pub per_item: BTreeMap<String, f64>,
}

/// A judgment scores 1 when it picks `side` or "both".
pub fn winning_rate(judgments: &[Judgment], side: Side) -> Result<WinningRate> {
    let items = group(judgments)?;
    let target = side.choice();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut per_item = BTreeMap::new();
    for (id, choices) in items {
        let hits = choices.iter().filter(|&&c| c == target || c == Choice::Both).count();
        total += hits as f64;
        count += choices.len();
        per_item.insert(id, hits as f64 / choices.len() as f64);
    }
    Ok(WinningRate {
        rate: total / count as f64,
        per_item,
    })
}

/// Items x categories table of vote counts.
pub fn category_counts(judgments: &[Judgment]) -> Result<Vec<Vec<usize>>> {
    Ok(group(judgments)?
        .values()
        .map(|choices| {
            let mut row = vec![0; Choice::ALL.len()];
            for c in choices {
                row[c.index()] += 1;
            }
            row
        })
        .collect())
}

/// Fleiss' kappa over an items x categories count table with a constant
/// number of raters per item. Returns 1 when every vote falls in one category.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64> {
    if counts.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n: usize = counts[0].iter().sum();
    if counts.iter().any(|r| r.iter().sum::<usize>() != n || r.len() != counts[0].len()) {
        return Err(AnalysisError::RaggedCounts);
    }
    if n < 2 {
        return Err(AnalysisError::TooFewRaters(n));
    }
    let items = counts.len() as f64;
    let nf = n as f64;
    let p_bar = counts
        .iter()
        .map(|r| r.iter().map(|&c| (c * c.saturating_sub(1)) as f64).sum::<f64>() / (nf * (nf - 1.0)))
        .sum::<f64>()
        / items;
    let q = counts[0].len();
    let p_e: f64 = (0..q)
        .map(|j| {
            let p = counts.iter().map(|r| r[j]).sum::<usize>() as f64 / (items * nf);
            p * p
        })
        .sum();
    if p_e >= 1.0 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

pub fn fleiss_kappa_judgments(judgments: &[Judgment]) -> Result<f64> {
    fleiss_kappa(&category_counts(judgments)?)
}

/// Statistics for one set of items; `defined` is false below two items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub items: usize,
    pub defined: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub win_tie_lose: Option<WinTieLose>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winning_rate_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winning_rate_2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ttest: Option<TTest>,
}

impl StratumReport {
    fn undefined(items: usize) -> Self {
        StratumReport {
            items,
            defined: false,
            win_tie_lose: None,
            kappa: None,
            winning_rate_1: None,
            winning_rate_2: None,
            ttest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// "judgments" or "scores:<metric>".
    pub source: String,
    pub rule: AggregationRule,
    pub overall: StratumReport,
    pub strata: BTreeMap<String, StratumReport>,
}

fn judgment_report(judgments: &[Judgment], rule: AggregationRule) -> Result<StratumReport> {
    let items = group(judgments)?.len();
    if items < 2 {
        return Ok(StratumReport::undefined(items));
    }
    let r1 = winning_rate(judgments, Side::Option1)?;
    let r2 = winning_rate(judgments, Side::Option2)?;
    let a: Vec<f64> = r1.per_item.values().copied().collect();
    let b: Vec<f64> = r2.per_item.values().copied().collect();
    Ok(StratumReport {
        items,
        defined: true,
        win_tie_lose: Some(win_tie_lose(judgments, Side::Option1, rule)?),
        kappa: Some(fleiss_kappa_judgments(judgments)?),
        winning_rate_1: Some(r1.rate),
        winning_rate_2: Some(r2.rate),
        ttest: Some(paired_ttest(&a, &b)?),
    })
}

fn strata_of<'a>(
    ids: impl Iterator<Item = &'a String>,
    labels: &BTreeMap<String, String>,
    requested: Option<&[String]>,
) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let mut strata: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for id in ids {
        let label = labels.get(id).ok_or_else(|| AnalysisError::Unlabeled(id.clone()))?;
        strata.entry(label.clone()).or_default().insert(id.clone());
    }
    if let Some(req) = requested {
        for r in req {
            strata.entry(r.clone()).or_default();
        }
    }
    Ok(strata)
}

/// Judgment statistics overall and per label; option 1 is the side of interest.
/// `requested` strata with no items are reported as undefined.
pub fn stratified_compare(
    judgments: &[Judgment],
    labels: &BTreeMap<String, String>,
    requested: Option<&[String]>,
    rule: AggregationRule,
) -> Result<ComparisonReport> {
    let all = group(judgments)?;
    let strata = strata_of(all.keys(), labels, requested)?;
    let mut out = BTreeMap::new();
    for (label, ids) in strata {
        let subset: Vec<Judgment> = judgments.iter().filter(|j| ids.contains(&j.item_id)).cloned().collect();
        let report = if subset.is_empty() {
            StratumReport::undefined(0)
        } else {
            judgment_report(&subset, rule)?
        };
        out.insert(label, report);
    }
    Ok(ComparisonReport {
        source: "judgments".into(),
        rule,
        overall: judgment_report(judgments, rule)?,
        strata: out,
    })
}

fn score_report(ids: &BTreeSet<String>, a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<StratumReport> {
    if ids.len() < 2 {
        return Ok(StratumReport::undefined(ids.len()));
    }
    let xa: Vec<f64> = ids.iter().map(|i| a[i]).collect();
    let xb: Vec<f64> = ids.iter().map(|i| b[i]).collect();
    let (mut w, mut t, mut l) = (0, 0, 0);
    for (x, y) in xa.iter().zip(&xb) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Greater => w += 1,
            std::cmp::Ordering::Equal => t += 1,
            std::cmp::Ordering::Less => l += 1,
        }
    }
    let n = ids.len() as f64;
    Ok(StratumReport {
        items: ids.len(),
        defined: true,
        win_tie_lose: Some(percentages(w, t, l, AggregationRule::PerJudgment)),
        kappa: None,
        winning_rate_1: Some(xa.iter().sum::<f64>() / n),
        winning_rate_2: Some(xb.iter().sum::<f64>() / n),
        ttest: Some(paired_ttest(&xa, &xb)?),
    })
}

/// Compares two systems by per-item automatic scores: an item is a win for
/// system 1 when its score is higher. The winning-rate fields hold mean scores.
pub fn stratified_compare_scores(
    metric: &str,
    scores_1: &BTreeMap<String, f64>,
    scores_2: &BTreeMap<String, f64>,
    labels: &BTreeMap<String, String>,
    requested: Option<&[String]>,
) -> Result<ComparisonReport> {
    if scores_1.is_empty() {
        return Err(AnalysisError::Empty);
    }
    for id in scores_1.keys().chain(scores_2.keys()) {
        if !scores_1.contains_key(id) || !scores_2.contains_key(id) {
            return Err(AnalysisError::MissingScore(id.clone()));
        }
    }
    let all: BTreeSet<String> = scores_1.keys().cloned().collect();
    let strata = strata_of(all.iter(), labels, requested)?;
    let mut out = BTreeMap::new();
    for (label, ids) in strata {
        out.insert(label, score_report(&ids, scores_1, scores_2)?);
    }
    Ok(ComparisonReport {
        source: format!("scores:{metric}"),
        rule: AggregationRule::PerJudgment,
        overall: score_report(&all, scores_1, scores_2)?,
        strata: out,
    })
}
