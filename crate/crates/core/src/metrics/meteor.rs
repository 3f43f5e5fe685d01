//! METEOR restricted to the exact and stem matching stages.
//!
//! The alignment maximizes the number of matched unigrams, then the number
//! of exact matches among them, then minimizes the chunk count. It is found
//! by memoized search over (hypothesis position, used reference positions,
//! previous aligned reference position). Inputs too large for that search
//! fall back to a greedy left-to-right alignment.

use std::collections::HashMap;

use super::stem;

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

const MAX_MEMO_STATES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub exact: usize,
    pub chunks: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Exact,
    Stem,
}

/// (matches, exact, chunks); better = more matches, more exact, fewer chunks.
type Value = (usize, usize, usize);

fn better(a: Value, b: Value) -> bool {
    (a.0, a.1, std::cmp::Reverse(a.2)) > (b.0, b.1, std::cmp::Reverse(b.2))
}

struct Search<'a> {
    candidates: &'a [Vec<(usize, Kind)>],
    memo: HashMap<(usize, u64, usize), Value>,
    exhausted: bool,
}

impl Search<'_> {
    /// Best continuation from hypothesis position `i`; `prev` is the
    /// reference position aligned to `i - 1` plus one, or 0.
    fn best(&mut self, i: usize, used: u64, prev: usize) -> Value {
        if i == self.candidates.len() || self.exhausted {
            return (0, 0, 0);
        }
        if let Some(v) = self.memo.get(&(i, used, prev)) {
            return *v;
        }
        if self.memo.len() >= MAX_MEMO_STATES {
            self.exhausted = true;
            return (0, 0, 0);
        }
        let mut best = self.best(i + 1, used, 0);
        for &(j, kind) in &self.candidates[i] {
            if used & (1 << j) != 0 {
                continue;
            }
            let rest = self.best(i + 1, used | (1 << j), j + 1);
            let new_chunk = usize::from(!(prev != 0 && prev == j));
            let v = (
                rest.0 + 1,
                rest.1 + usize::from(kind == Kind::Exact),
                rest.2 + new_chunk,
            );
            if better(v, best) {
                best = v;
            }
        }
        self.memo.insert((i, used, prev), best);
        best
    }
}

fn candidate_pairs(hyp: &[String], reference: &[String]) -> Vec<Vec<(usize, Kind)>> {
    let hyp_stems: Vec<String> = hyp.iter().map(|t| stem(t)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|t| stem(t)).collect();
    hyp.iter()
        .enumerate()
        .map(|(i, h)| {
            reference
                .iter()
                .enumerate()
                .filter_map(|(j, r)| {
                    if h == r {
                        Some((j, Kind::Exact))
                    } else if hyp_stems[i] == ref_stems[j] {
                        Some((j, Kind::Stem))
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect()
}

fn greedy(candidates: &[Vec<(usize, Kind)>], ref_len: usize) -> Alignment {
    let mut used = vec![false; ref_len];
    let mut aligned: Vec<Option<(usize, Kind)>> = vec![None; candidates.len()];
    for stage in [Kind::Exact, Kind::Stem] {
        for (i, cands) in candidates.iter().enumerate() {
            if aligned[i].is_some() {
                continue;
            }
            if let Some(&(j, k)) = cands.iter().find(|(j, k)| *k == stage && !used[*j]) {
                used[j] = true;
                aligned[i] = Some((j, k));
            }
        }
    }
    let mut a = Alignment {
        matches: 0,
        exact: 0,
        chunks: 0,
    };
    let mut prev: Option<usize> = None;
    for slot in &aligned {
        match slot {
            Some((j, k)) => {
                a.matches += 1;
                a.exact += usize::from(*k == Kind::Exact);
                if prev.map_or(true, |p| p + 1 != *j) {
                    a.chunks += 1;
                }
                prev = Some(*j);
            }
            None => prev = None,
        }
    }
    a
}

pub fn align(hyp: &[String], reference: &[String]) -> Alignment {
    let candidates = candidate_pairs(hyp, reference);
    if reference.len() <= 64 {
        let mut search = Search {
            candidates: &candidates,
            memo: HashMap::new(),
            exhausted: false,
        };
        let (matches, exact, chunks) = search.best(0, 0, 0);
        if !search.exhausted {
            return Alignment { matches, exact, chunks };
        }
        log::debug!("meteor alignment search budget exhausted; using greedy alignment");
    }
    greedy(&candidates, reference.len())
}

pub fn meteor_lite(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = align(hyp, reference);
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / hyp.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (a.chunks as f64 / m).powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}
