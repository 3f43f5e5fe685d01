//! Independent reference implementations used as test oracles. They favour
//! plain loops and exhaustive search over speed.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use infergap_core::backend::{ModelBackend, ToyBackend, TokenId};
use infergap_core::metrics::{stem, tokenize};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

/// Twenty hypothesis/reference pairs with repeats, inflections and punctuation.
pub const METRIC_PAIRS: [(&str, &str); 20] = [
    ("the cat sat on the mat", "the cat is on the mat"),
    ("the cat sat", "the cat sat on the mat"),
    ("a dog runs in the park", "the dog is running in the park"),
    ("he wants to buy a new car .", "he wants to buy a car ."),
    ("she is happy about the news", "she feels happy after hearing the news"),
    ("they walked home together", "they were walking home"),
    ("the the the cat", "the cat the"),
    ("i will call you tomorrow", "i will call you tomorrow"),
    ("the listener is angry", "the speaker wants some help"),
    ("the speaker missed the bus", "the speaker missed the early bus and was late"),
    ("rain makes the streets wet", "the streets are wet because of rain"),
    ("the child cried loudly", "the children were crying"),
    ("he studies for his exams", "he is studying for the exam"),
    ("a quick brown fox", "the quick brown fox jumps"),
    ("we cooked dinner and ate it", "we ate the dinner we cooked"),
    ("the meeting was cancelled .", "the meeting got cancelled ."),
    ("the roses bloomed in spring", "roses bloom every spring"),
    ("she's tired after work", "she is tired after a long day at work"),
    ("the team won the match", "the team lost the match"),
    ("birds sing early", "early birds sing songs"),
];

pub fn pair_tokens() -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    METRIC_PAIRS.iter().map(|(h, r)| (tokenize(h), tokenize(r))).unzip()
}

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// Corpus BLEU-1..4 from clipped counts found by linear scans.
pub fn bleu_oracle(hyps: &[Vec<String>], refs: &[Vec<String>]) -> [f64; 4] {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let hg = grams(h, n);
            let rg = grams(rf, n);
            total[n - 1] += hg.len();
            let mut seen: Vec<Vec<String>> = Vec::new();
            for g in &hg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g.clone());
                matched[n - 1] += occurrences(&hg, g).min(occurrences(&rg, g));
            }
        }
    }
    let bp = if c == 0 {
        0.0
    } else if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut out = [0.0; 4];
    for n in 1..=4 {
        if (0..n).any(|j| matched[j] == 0) {
            continue;
        }
        let logs: f64 = (0..n).map(|j| (matched[j] as f64 / total[j] as f64).ln()).sum();
        out[n - 1] = bp * (logs / n as f64).exp();
    }
    out
}

fn lcs_memo(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if i == a.len() || j == b.len() {
        return 0;
    }
    if let Some(&v) = memo.get(&(i, j)) {
        return v;
    }
    let v = if a[i] == b[j] {
        1 + lcs_memo(a, b, i + 1, j + 1, memo)
    } else {
        lcs_memo(a, b, i + 1, j, memo).max(lcs_memo(a, b, i, j + 1, memo))
    };
    memo.insert((i, j), v);
    v
}

pub fn rouge_oracle(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let l = lcs_memo(h, r, 0, 0, &mut HashMap::new()) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rec) = (l / h.len() as f64, l / r.len() as f64);
    let b2 = 1.2f64 * 1.2;
    (1.0 + b2) * p * rec / (rec + b2 * p)
}

/// Every injective partial alignment of exact or stem matches; keeps the one
/// with most matches, then most exact matches, then fewest chunks.
pub fn meteor_alignment_oracle(h: &[String], r: &[String]) -> (usize, usize, usize) {
    fn walk(h: &[String], r: &[String], i: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize, bool)>, best: &mut (usize, usize, usize)) {
        if i == h.len() {
            let m = cur.len();
            let exact = cur.iter().filter(|x| x.2).count();
            let mut chunks = 0;
            for (k, &(hi, ri, _)) in cur.iter().enumerate() {
                let continues = k > 0 && cur[k - 1].0 + 1 == hi && cur[k - 1].1 + 1 == ri;
                if !continues {
                    chunks += 1;
                }
            }
            let key = |x: (usize, usize, usize)| (x.0, x.1, std::cmp::Reverse(x.2));
            if key((m, exact, chunks)) > key(*best) {
                *best = (m, exact, chunks);
            }
            return;
        }
        walk(h, r, i + 1, used, cur, best);
        for j in 0..r.len() {
            if used[j] {
                continue;
            }
            let exact = h[i] == r[j];
            if !exact && stem(&h[i]) != stem(&r[j]) {
                continue;
            }
            used[j] = true;
            cur.push((i, j, exact));
            walk(h, r, i + 1, used, cur, best);
            cur.pop();
            used[j] = false;
        }
    }
    let mut best = (0, 0, usize::MAX);
    walk(h, r, 0, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    if best.0 == 0 {
        (0, 0, 0)
    } else {
        best
    }
}

pub fn meteor_oracle(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let (m, _, chunks) = meteor_alignment_oracle(h, r);
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    let (p, rec) = (m / h.len() as f64, m / r.len() as f64);
    let fmean = p * rec / (0.9 * p + 0.1 * rec);
    fmean * (1.0 - 0.5 * (chunks as f64 / m).powi(3))
}

/// Mean per-pair CIDEr with idf from the references, all on stems.
pub fn cider_oracle(hyps: &[Vec<String>], refs: &[Vec<String>]) -> (f64, Vec<f64>) {
    let stems = |t: &Vec<String>| t.iter().map(|w| stem(w)).collect::<Vec<_>>();
    let hs: Vec<Vec<String>> = hyps.iter().map(stems).collect();
    let rs: Vec<Vec<String>> = refs.iter().map(stems).collect();
    let docs = rs.len() as f64;
    let idf = |g: &[String], n: usize| {
        let df = rs.iter().filter(|r| grams(r, n).iter().any(|x| x.as_slice() == g)).count().max(1);
        (docs / df as f64).ln()
    };
    let vector = |t: &[String], n: usize| -> Vec<(Vec<String>, f64)> {
        let gs = grams(t, n);
        let mut v: Vec<(Vec<String>, f64)> = Vec::new();
        for g in &gs {
            if v.iter().any(|(x, _)| x == g) {
                continue;
            }
            v.push((g.clone(), occurrences(&gs, g) as f64 * idf(g, n)));
        }
        v
    };
    let per: Vec<f64> = hs
        .iter()
        .zip(&rs)
        .map(|(h, r)| {
            let mut sum = 0.0;
            for n in 1..=4 {
                let vh = vector(h, n);
                let vr = vector(r, n);
                let nh = vh.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
                let nr = vr.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
                if nh == 0.0 || nr == 0.0 {
                    continue;
                }
                let dot: f64 = vh
                    .iter()
                    .map(|(g, w)| vr.iter().find(|(x, _)| x == g).map_or(0.0, |(_, y)| w * y))
                    .sum();
                sum += 10.0 * dot / (nh * nr);
            }
            sum / 4.0
        })
        .collect();
    (per.iter().sum::<f64>() / per.len() as f64, per)
}

/// Fleiss kappa from raw per-item rater choices via explicit rater pairs.
pub fn kappa_oracle(items: &[Vec<usize>], categories: usize) -> f64 {
    let n = items[0].len();
    let total = (items.len() * n) as f64;
    let mut p_bar = 0.0;
    for votes in items {
        let mut agree = 0usize;
        for a in 0..n {
            for b in 0..n {
                if a != b && votes[a] == votes[b] {
                    agree += 1;
                }
            }
        }
        p_bar += agree as f64 / (n * (n - 1)) as f64;
    }
    p_bar /= items.len() as f64;
    let p_e: f64 = (0..categories)
        .map(|c| {
            let p = items.iter().flatten().filter(|&&v| v == c).count() as f64 / total;
            p * p
        })
        .sum();
    (p_bar - p_e) / (1.0 - p_e)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, eps, 50)
}

/// Two-sided Student-t tail probability by quadrature of the unnormalized
/// density, normalized numerically as well.
pub fn t_two_sided_oracle(t: f64, df: f64) -> f64 {
    let g = |x: f64| (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    // x = a + u / (1 - u) maps [0, 1) onto [a, inf).
    let tail = |a: f64| {
        let h = move |u: f64| {
            let w = 1.0 - u;
            let x = a + u / w;
            g(x) / (w * w)
        };
        let edge = 1.0 - 1e-10;
        adaptive_simpson(&h, 0.0, 0.5, 1e-14) + adaptive_simpson(&h, 0.5, 0.9, 1e-14) + adaptive_simpson(&h, 0.9, edge, 1e-14)
    };
    tail(t.abs()) / tail(0.0)
}

fn toy_log_softmax(model: &ToyBackend, window: &[TokenId]) -> Vec<f64> {
    let d = model.dim();
    let mut mean = vec![0.0; d];
    for &t in window {
        for (k, m) in mean.iter_mut().enumerate() {
            *m += model.e_row(t)[k];
        }
    }
    if !window.is_empty() {
        for m in mean.iter_mut() {
            *m /= window.len() as f64;
        }
    }
    let v = model.vocab().len();
    let logits: Vec<f64> = (0..v as TokenId)
        .map(|i| {
            let u = model.u_row(i);
            (0..d).map(|k| u[k] * mean[k]).sum::<f64>() + model.bias()[i as usize]
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    logits.iter().map(|l| l - max - z.ln()).collect()
}

/// |log p(a_j | X + A without j) - log p(a_j | A without j)| for every j,
/// straight from the toy parameters.
pub fn deltas_oracle(model: &ToyBackend, input: &[TokenId], answer: &[TokenId]) -> Vec<f64> {
    (0..answer.len())
        .map(|j| {
            let rest: Vec<TokenId> = answer.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, t)| *t).collect();
            let mut with: Vec<TokenId> = input.to_vec();
            with.extend(&rest);
            let a = answer[j] as usize;
            (toy_log_softmax(model, &with)[a] - toy_log_softmax(model, &rest)[a]).abs()
        })
        .collect()
}

/// Positions above the threshold, else every position attaining the maximum
/// (the caller takes the lowest).
pub fn selection_oracle(deltas: &[f64], threshold: f64) -> Vec<usize> {
    let above: Vec<usize> = (0..deltas.len()).filter(|&j| deltas[j] > threshold).collect();
    if !above.is_empty() {
        return above;
    }
    let max = deltas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    vec![(0..deltas.len()).find(|&j| deltas[j] == max).unwrap()]
}

/// Top-k non-special tokens of the answer-only distribution at `j`, gold removed.
pub fn candidates_oracle(model: &ToyBackend, answer: &[TokenId], j: usize, k: usize) -> Vec<TokenId> {
    let rest: Vec<TokenId> = answer.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, t)| *t).collect();
    let lp = toy_log_softmax(model, &rest);
    let mut ids: Vec<TokenId> = (0..lp.len() as TokenId)
        .filter(|&t| !infergap_core::backend::Vocabulary::is_special(t))
        .collect();
    ids.sort_by(|a, b| lp[*b as usize].partial_cmp(&lp[*a as usize]).unwrap().then(a.cmp(b)));
    ids.into_iter().take(k).filter(|&t| t != answer[j]).collect()
}
