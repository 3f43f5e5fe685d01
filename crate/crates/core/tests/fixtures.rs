mod common;

use std::fs;

use common::fixture_dir;
use infergap_core::corpus::{
    load_dataset, parse_cicero_json, synthetic, to_canonical_jsonl, DatasetFormat, Difficulty, InferenceExample,
    QuestionType, Utterance,
};
use infergap_core::pipeline::load_judgments;

fn check_or_bless(name: &str, examples: &[InferenceExample]) {
    let path = fixture_dir().join(name);
    let want = to_canonical_jsonl(examples);
    if std::env::var_os("INFERGAP_BLESS").is_some() {
        fs::write(&path, &want).unwrap();
    }
    let shipped = fs::read_to_string(&path).unwrap();
    assert_eq!(shipped, want, "{name} is stale; rerun with INFERGAP_BLESS=1");
    let loaded = load_dataset(&path, DatasetFormat::CanonicalJsonl).unwrap();
    assert_eq!(loaded, examples);
}

#[test]
fn shipped_synthetic_corpus_matches_generator() {
    check_or_bless("synthetic_train.jsonl", &synthetic::generate(200, 1, "train"));
    check_or_bless("synthetic_valid.jsonl", &synthetic::generate(50, 2, "valid"));
}

fn turns(lines: &[(&str, &str)]) -> Vec<Utterance> {
    lines
        .iter()
        .enumerate()
        .map(|(i, (s, t))| Utterance { speaker: s.to_string(), text: t.to_string(), index: i + 1 })
        .collect()
}

fn owned(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn cicero_sample_matches_hand_conversion() {
    let text = fs::read_to_string(fixture_dir().join("cicero_sample.json")).unwrap();
    let got = parse_cicero_json(&text).unwrap();
    let want = vec![
        InferenceExample {
            id: "dd-0001".into(),
            dialogue: turns(&[
                ("A", "I missed the bus again this morning."),
                ("B", "Oh no, were you late for the meeting?"),
                ("A", "Twenty minutes late. My manager was not pleased."),
                ("B", "Maybe you should leave home a bit earlier."),
            ]),
            target_index: 3,
            question: QuestionType::Cause,
            answer: "The speaker missed the bus and arrived late to the meeting.".into(),
            counterfactuals: owned(&[
                "The speaker overslept because the alarm was broken.",
                "The manager cancelled the meeting.",
                "The speaker drove to work early.",
                "The bus arrived ahead of schedule.",
            ]),
            difficulty: Some(Difficulty::Sufficient),
        },
        InferenceExample {
            id: "dd-0002".into(),
            dialogue: turns(&[
                ("A", "Do you want to grab dinner tonight?"),
                ("B", "I would love to, but I have an exam tomorrow."),
                ("A", "Then let's go after your exam."),
                ("B", "Sounds great, I will call you tomorrow."),
            ]),
            target_index: 2,
            question: QuestionType::Motivation,
            answer: "The listener wants to study for the exam.".into(),
            counterfactuals: owned(&[
                "The listener dislikes the restaurant.",
                "The listener is already full.",
                "The listener wants to go dancing.",
                "The listener wants to skip the exam.",
            ]),
            difficulty: Some(Difficulty::Likely),
        },
        InferenceExample {
            id: "dd-0003".into(),
            dialogue: turns(&[
                ("A", "The garden looks wonderful this year."),
                ("B", "Thanks, I planted new roses in spring."),
                ("A", "They smell amazing."),
            ]),
            target_index: 2,
            question: QuestionType::SubsequentEventClipped,
            answer: "The roses bloomed and the garden smelled nice.".into(),
            counterfactuals: owned(&[
                "The speaker cut the grass.",
                "The speaker sold the house.",
                "The roses died over winter.",
                "The garden was flooded.",
            ]),
            difficulty: None,
        },
    ];
    assert_eq!(got, want);
    for e in &got {
        assert!(e.counterfactuals.iter().all(|c| c != &e.answer));
    }
}

#[test]
fn judgment_fixture_is_complete() {
    let js = load_judgments(&fixture_dir().join("judgments.jsonl")).unwrap();
    assert_eq!(js.len(), 36);
    let items: std::collections::BTreeSet<_> = js.iter().map(|j| j.item_id.as_str()).collect();
    assert_eq!(items.len(), 12);
}
