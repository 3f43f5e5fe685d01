mod common;

use std::fs;

use common::*;
use infergap_core::metrics::{align, cider, corpus_bleu, meteor_lite, rouge_l, score_corpus, stem, ScoredPair, TokenSequence};

fn seqs(v: &[Vec<String>]) -> Vec<TokenSequence> {
    v.iter().map(|t| TokenSequence::from_tokens(t.clone())).collect()
}

#[test]
fn porter_reference_vectors() {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/porter_vectors.tsv")).unwrap();
    let mut mismatches = Vec::new();
    let mut n = 0;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (word, expected) = line.split_once('\t').unwrap();
        n += 1;
        if stem(word) != expected {
            mismatches.push(format!("{word}: got {} want {expected}", stem(word)));
        }
    }
    assert!(n > 1000);
    assert!(mismatches.is_empty(), "{} mismatches: {:?}", mismatches.len(), &mismatches[..mismatches.len().min(10)]);
}

#[test]
fn bleu_matches_brute_force() {
    let (h, r) = pair_tokens();
    let got = corpus_bleu(&seqs(&h), &seqs(&r), 4).unwrap();
    let want = bleu_oracle(&h, &r);
    for n in 0..4 {
        assert!((got[n] - want[n]).abs() < 1e-9, "BLEU-{}: {} vs {}", n + 1, got[n], want[n]);
    }
    for i in 0..h.len() {
        let got = corpus_bleu(&seqs(&h[i..=i]), &seqs(&r[i..=i]), 4).unwrap();
        let want = bleu_oracle(&h[i..=i], &r[i..=i]);
        for n in 0..4 {
            assert!((got[n] - want[n]).abs() < 1e-9, "pair {i} BLEU-{}", n + 1);
        }
    }
}

#[test]
fn rouge_matches_brute_force() {
    let (h, r) = pair_tokens();
    for (i, (a, b)) in h.iter().zip(&r).enumerate() {
        assert!((rouge_l(a, b) - rouge_oracle(a, b)).abs() < 1e-9, "pair {i}");
    }
}

#[test]
fn meteor_matches_exhaustive_alignment() {
    let (h, r) = pair_tokens();
    for (i, (a, b)) in h.iter().zip(&r).enumerate() {
        let al = align(a, b);
        let (m, exact, chunks) = meteor_alignment_oracle(a, b);
        assert_eq!((al.matches, al.exact, al.chunks), (m, exact, chunks), "pair {i}");
        assert!((meteor_lite(a, b) - meteor_oracle(a, b)).abs() < 1e-9, "pair {i}");
    }
}

#[test]
fn cider_matches_naive_tfidf() {
    let (h, r) = pair_tokens();
    let (got, per) = cider(&seqs(&h), &seqs(&r)).unwrap();
    let (want, want_per) = cider_oracle(&h, &r);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    for (i, (a, b)) in per.iter().zip(&want_per).enumerate() {
        assert!((a - b).abs() < 1e-9, "pair {i}");
    }
}

#[test]
fn stratified_reports_equal_subset_runs() {
    let pairs: Vec<ScoredPair> = METRIC_PAIRS
        .iter()
        .enumerate()
        .map(|(i, (h, r))| ScoredPair {
            id: format!("p{i:02}"),
            hypothesis: h.to_string(),
            reference: r.to_string(),
        })
        .collect();
    let labels: std::collections::BTreeMap<String, String> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.clone(), ["sufficient", "likely", "conceivable"][i % 3].to_string()))
        .collect();
    let report = score_corpus(&pairs, Some(&labels), false).unwrap();
    assert_eq!(report.strata.len(), 3);
    for (label, sub) in &report.strata {
        let subset: Vec<ScoredPair> = pairs.iter().filter(|p| &labels[&p.id] == label).cloned().collect();
        let alone = score_corpus(&subset, None, false).unwrap();
        assert_eq!(sub, &alone, "{label}");
        assert_eq!(sub.count, subset.len());
    }
    let one: std::collections::BTreeMap<String, String> = pairs.iter().map(|p| (p.id.clone(), "all".into())).collect();
    let single = score_corpus(&pairs, Some(&one), false).unwrap();
    let mut plain = single.strata["all"].clone();
    plain.strata = single.strata.clone();
    assert_eq!(plain, single);
}
