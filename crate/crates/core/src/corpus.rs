//! Dialogue-inference examples: data model, ingestion, clipping and input
//! serialization.
//!
//! The canonical on-disk format is JSON Lines, one [`InferenceExample`] per
//! line. The CICERO record shape is accepted through [`DatasetFormat::CiceroJson`]
//! and converted on load.

pub mod synthetic;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::tokenize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid example `{id}`: {message}")]
    Invalid { id: String, message: String },
    #[error("unknown template id `{0}`")]
    UnknownTemplate(String),
    #[error("unknown dataset format `{0}`")]
    UnknownFormat(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    /// 1-based turn position.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Cause,
    SubsequentEvent,
    SubsequentEventClipped,
    Prerequisite,
    Motivation,
    Reaction,
}

impl QuestionType {
    pub const ALL: [QuestionType; 6] = [
        QuestionType::Cause,
        QuestionType::SubsequentEvent,
        QuestionType::SubsequentEventClipped,
        QuestionType::Prerequisite,
        QuestionType::Motivation,
        QuestionType::Reaction,
    ];

    pub fn question_text(self) -> &'static str {
        match self {
            QuestionType::Cause => "What is or could be the cause of the target utterance?",
            QuestionType::Prerequisite => "What is or could be the prerequisite of target?",
            QuestionType::SubsequentEvent | QuestionType::SubsequentEventClipped => {
                "What subsequent event happens or could happen following the target?"
            }
            QuestionType::Motivation => "What is or could be the motivation of target?",
            QuestionType::Reaction => {
                "What is the possible emotional reaction of the listener in response to target?"
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Cause => "cause",
            QuestionType::SubsequentEvent => "subsequent_event",
            QuestionType::SubsequentEventClipped => "subsequent_event_clipped",
            QuestionType::Prerequisite => "prerequisite",
            QuestionType::Motivation => "motivation",
            QuestionType::Reaction => "reaction",
        }
    }

    /// Maps a free-form question string (upstream wording or a short label)
    /// onto a question type. The clipped variant is only reachable through
    /// its explicit label.
    pub fn from_question_string(s: &str) -> Option<QuestionType> {
        let lower = s.trim().to_lowercase();
        if let Some(q) = QuestionType::ALL.iter().find(|q| q.as_str() == lower) {
            return Some(*q);
        }
        if lower.contains("clipped") {
            Some(QuestionType::SubsequentEventClipped)
        } else if lower.contains("cause") {
            Some(QuestionType::Cause)
        } else if lower.contains("prerequisite") {
            Some(QuestionType::Prerequisite)
        } else if lower.contains("subsequent") {
            Some(QuestionType::SubsequentEvent)
        } else if lower.contains("motivation") {
            Some(QuestionType::Motivation)
        } else if lower.contains("reaction") {
            Some(QuestionType::Reaction)
        } else {
            None
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Information-gap difficulty label, supplied by annotators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Sufficient,
    Likely,
    Conceivable,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Sufficient, Difficulty::Likely, Difficulty::Conceivable];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Sufficient => "sufficient",
            Difficulty::Likely => "likely",
            Difficulty::Conceivable => "conceivable",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceExample {
    pub id: String,
    pub dialogue: Vec<Utterance>,
    /// 1-based index of the target utterance.
    pub target_index: usize,
    pub question: QuestionType,
    pub answer: String,
    pub counterfactuals: Vec<String>,
    pub difficulty: Option<Difficulty>,
}

/// Lowercase and collapse whitespace; the equality used for "distinct from gold".
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

pub const MAX_COUNTERFACTUALS: usize = 4;

impl InferenceExample {
    pub fn target(&self) -> &Utterance {
        &self.dialogue[self.target_index - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| CorpusError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.dialogue.is_empty() {
            return Err(invalid("dialogue is empty".into()));
        }
        for (pos, u) in self.dialogue.iter().enumerate() {
            if u.index != pos + 1 {
                return Err(invalid(format!(
                    "utterance indices must be contiguous from 1, found {} at position {}",
                    u.index,
                    pos + 1
                )));
            }
            if u.text.trim().is_empty() {
                return Err(invalid(format!("utterance {} has empty text", u.index)));
            }
        }
        if self.target_index < 1 || self.target_index > self.dialogue.len() {
            return Err(invalid(format!(
                "target_index {} out of range 1..={}",
                self.target_index,
                self.dialogue.len()
            )));
        }
        if self.answer.trim().is_empty() {
            return Err(invalid("answer is empty".into()));
        }
        if self.counterfactuals.len() > MAX_COUNTERFACTUALS {
            return Err(invalid(format!(
                "{} counterfactuals given, at most {MAX_COUNTERFACTUALS} allowed",
                self.counterfactuals.len()
            )));
        }
        let gold = normalize_text(&self.answer);
        let mut seen: Vec<String> = Vec::with_capacity(self.counterfactuals.len());
        for cf in &self.counterfactuals {
            let norm = normalize_text(cf);
            if norm.is_empty() {
                return Err(invalid("empty counterfactual".into()));
            }
            if norm == gold {
                return Err(invalid(format!("counterfactual `{cf}` equals the gold answer")));
            }
            if seen.contains(&norm) {
                return Err(invalid(format!("duplicate counterfactual `{cf}`")));
            }
            seen.push(norm);
        }
        Ok(())
    }
}

/// Keeps utterances up to and including the target.
pub fn clip_dialogue(example: &InferenceExample) -> InferenceExample {
    let mut out = example.clone();
    out.dialogue.truncate(example.target_index);
    out
}

// ---------------------------------------------------------------------------
// Serialization of model inputs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TemplateId {
    /// `<question> \n target: <U_t> \n context: <speaker>: <text>` lines.
    #[default]
    #[serde(rename = "default_v1")]
    DefaultV1,
    /// Same layout with speakers rendered as `turn <i>`.
    #[serde(rename = "turn_index_v1")]
    TurnIndexV1,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::DefaultV1 => "default_v1",
            TemplateId::TurnIndexV1 => "turn_index_v1",
        }
    }
}

impl FromStr for TemplateId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default_v1" => Ok(TemplateId::DefaultV1),
            "turn_index_v1" => Ok(TemplateId::TurnIndexV1),
            other => Err(CorpusError::UnknownTemplate(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedInput {
    pub text: String,
    pub token_count: usize,
}

pub fn serialize_input(example: &InferenceExample, template: TemplateId) -> SerializedInput {
    let context = example
        .dialogue
        .iter()
        .map(|u| match template {
            TemplateId::DefaultV1 => format!("{}: {}", u.speaker, u.text),
            TemplateId::TurnIndexV1 => format!("turn {}: {}", u.index, u.text),
        })
        .collect::<Vec<_>>()
        .join("\n");
    let text = format!(
        "{} \n target: {} \n context: {}",
        example.question.question_text(),
        example.target().text,
        context
    );
    let token_count = tokenize(&text).len();
    SerializedInput { text, token_count }
}

/// Like [`serialize_input`], but clips subsequent-event-clipped examples first.
pub fn prepare_input(example: &InferenceExample, template: TemplateId) -> SerializedInput {
    if example.question == QuestionType::SubsequentEventClipped {
        serialize_input(&clip_dialogue(example), template)
    } else {
        serialize_input(example, template)
    }
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    CanonicalJsonl,
    CiceroJson,
}

impl FromStr for DatasetFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical_jsonl" => Ok(DatasetFormat::CanonicalJsonl),
            "cicero_json" => Ok(DatasetFormat::CiceroJson),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRecord {
    pub speaker: String,
    pub text: String,
}

/// One line of canonical JSONL. `generated` is only present in generation
/// outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalRecord {
    pub id: String,
    pub dialogue: Vec<TurnRecord>,
    pub target_index: usize,
    pub question: QuestionType,
    pub answer: String,
    #[serde(default)]
    pub counterfactuals: Vec<String>,
    #[serde(default)]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<String>,
}

impl CanonicalRecord {
    pub fn from_example(e: &InferenceExample, generated: Option<String>) -> Self {
        CanonicalRecord {
            id: e.id.clone(),
            dialogue: e
                .dialogue
                .iter()
                .map(|u| TurnRecord {
                    speaker: u.speaker.clone(),
                    text: u.text.clone(),
                })
                .collect(),
            target_index: e.target_index,
            question: e.question,
            answer: e.answer.clone(),
            counterfactuals: e.counterfactuals.clone(),
            difficulty: e.difficulty,
            generated,
        }
    }

    pub fn to_example(&self) -> InferenceExample {
        InferenceExample {
            id: self.id.clone(),
            dialogue: self
                .dialogue
                .iter()
                .enumerate()
                .map(|(i, t)| Utterance {
                    speaker: t.speaker.clone(),
                    text: t.text.clone(),
                    index: i + 1,
                })
                .collect(),
            target_index: self.target_index,
            question: self.question,
            answer: self.answer.clone(),
            counterfactuals: self.counterfactuals.clone(),
            difficulty: self.difficulty,
        }
    }
}

/// Upstream CICERO record. `Dialogue` turns are `"Speaker: text"` strings and
/// `Target` is either the target utterance text or its 1-based turn number.
#[derive(Debug, Clone, Deserialize)]
struct CiceroRecord {
    #[serde(rename = "ID")]
    id: serde_json::Value,
    #[serde(rename = "Dialogue")]
    dialogue: Vec<String>,
    #[serde(rename = "Target")]
    target: serde_json::Value,
    #[serde(rename = "Question")]
    question: String,
    #[serde(rename = "Choices")]
    choices: Vec<String>,
    #[serde(rename = "Correct Answers", alias = "Human Written Answer")]
    correct: serde_json::Value,
    #[serde(rename = "Negatives", default)]
    negatives: Vec<String>,
    #[serde(rename = "Difficulty", default)]
    difficulty: Option<Difficulty>,
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<InferenceExample>> {
    let text = read_file(path)?;
    match format {
        DatasetFormat::CanonicalJsonl => parse_canonical_jsonl(&text),
        DatasetFormat::CiceroJson => parse_cicero_json(&text),
    }
}

pub fn parse_canonical_records(text: &str) -> Result<Vec<CanonicalRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CanonicalRecord = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        rec.to_example().validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_canonical_jsonl(text: &str) -> Result<Vec<InferenceExample>> {
    Ok(parse_canonical_records(text)?
        .iter()
        .map(CanonicalRecord::to_example)
        .collect())
}

/// Loads canonical JSONL keeping the optional `generated` field.
pub fn load_canonical_records(path: &Path) -> Result<Vec<CanonicalRecord>> {
    parse_canonical_records(&read_file(path)?)
}

pub fn to_canonical_jsonl(examples: &[InferenceExample]) -> String {
    let mut out = String::new();
    for e in examples {
        let rec = CanonicalRecord::from_example(e, None);
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, examples: &[InferenceExample]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(to_canonical_jsonl(examples).as_bytes())
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Accepts a JSON array of records, a single record, or one record per line.
pub fn parse_cicero_json(text: &str) -> Result<Vec<InferenceExample>> {
    let records: Vec<(usize, serde_json::Value)> = match serde_json::from_str::<serde_json::Value>(text) {
        Ok(serde_json::Value::Array(items)) => items.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect(),
        Ok(v @ serde_json::Value::Object(_)) => vec![(1, v)],
        Ok(_) => {
            return Err(CorpusError::Parse {
                line: 1,
                message: "expected a JSON array or object".into(),
            })
        }
        Err(_) => {
            let mut v = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let value = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
                v.push((lineno + 1, value));
            }
            v
        }
    };
    records
        .into_iter()
        .map(|(line, value)| {
            let rec: CiceroRecord = serde_json::from_value(value).map_err(|e| CorpusError::Parse {
                line,
                message: e.to_string(),
            })?;
            let ex = convert_cicero(rec)?;
            ex.validate()?;
            Ok(ex)
        })
        .collect()
}

fn json_id(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn split_turn(turn: &str) -> (String, String) {
    match turn.split_once(':') {
        Some((speaker, text)) if !speaker.trim().is_empty() && speaker.len() <= 40 => {
            (speaker.trim().to_string(), text.trim().to_string())
        }
        _ => (String::new(), turn.trim().to_string()),
    }
}

fn convert_cicero(rec: CiceroRecord) -> Result<InferenceExample> {
    let id = json_id(&rec.id);
    let invalid = |message: String| CorpusError::Invalid {
        id: id.clone(),
        message,
    };
    let dialogue: Vec<Utterance> = rec
        .dialogue
        .iter()
        .enumerate()
        .map(|(i, turn)| {
            let (speaker, text) = split_turn(turn);
            Utterance { speaker, text, index: i + 1 }
        })
        .collect();
    let target_index = match &rec.target {
        serde_json::Value::Number(n) => n
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| invalid(format!("bad target number {n}")))?,
        serde_json::Value::String(s) => {
            let wanted = normalize_text(s);
            dialogue
                .iter()
                .find(|u| normalize_text(&u.text) == wanted || normalize_text(&format!("{}: {}", u.speaker, u.text)) == wanted)
                .map(|u| u.index)
                .ok_or_else(|| invalid("target utterance not found in dialogue".into()))?
        }
        other => return Err(invalid(format!("unsupported Target value {other}"))),
    };
    let question = QuestionType::from_question_string(&rec.question)
        .ok_or_else(|| invalid(format!("unrecognized question `{}`", rec.question)))?;
    let gold_idx = match &rec.correct {
        serde_json::Value::Number(n) => n.as_u64(),
        serde_json::Value::Array(items) => items.first().and_then(|v| v.as_u64()),
        _ => None,
    }
    .map(|n| n as usize)
    .ok_or_else(|| invalid("missing correct-answer index".into()))?;
    let answer = rec
        .choices
        .get(gold_idx)
        .cloned()
        .ok_or_else(|| invalid(format!("correct-answer index {gold_idx} out of range")))?;
    let gold_norm = normalize_text(&answer);
    let mut counterfactuals: Vec<String> = Vec::new();
    let mut seen = vec![gold_norm];
    for c in rec.choices.iter().chain(rec.negatives.iter()) {
        let norm = normalize_text(c);
        if norm.is_empty() || seen.contains(&norm) {
            continue;
        }
        seen.push(norm);
        counterfactuals.push(c.clone());
    }
    if counterfactuals.len() > MAX_COUNTERFACTUALS {
        log::warn!(
            "{id}: keeping {MAX_COUNTERFACTUALS} of {} alternatives (choices before listed negatives)",
            counterfactuals.len()
        );
        counterfactuals.truncate(MAX_COUNTERFACTUALS);
    }
    Ok(InferenceExample {
        id,
        dialogue,
        target_index,
        question,
        answer,
        counterfactuals,
        difficulty: rec.difficulty,
    })
}
