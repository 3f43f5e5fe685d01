//! Stage functions behind the command line: each reads its inputs, writes
//! canonical artifacts and returns a summary. Every output directory carries
//! a `manifest.json` with artifact digests, the config digest and the seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    stratified_compare, stratified_compare_scores, AggregationRule, AnalysisError, Choice, ComparisonReport, Judgment,
    StratumReport,
};
use crate::artifact::{sha256_hex, write_json, write_jsonl};
use crate::backend::{generate, BackendError, ModelBackend, ToyBackend, ToyCheckpoint};
use crate::config::{CompareMetric, ConfigError, RunConfig, StratifyBy};
use crate::corpus::{
    load_canonical_records, load_dataset, prepare_input, synthetic, CanonicalRecord, CorpusError, DatasetFormat,
    Difficulty, InferenceExample, QuestionType,
};
use crate::metrics::{meteor_lite, rouge_l, score_corpus, sentence_bleu, MetricReport, MetricsError, ScoredPair, TokenSequence};
use crate::negatives::{
    derive_seed, fit_mcq_scorer, generate_nonoptimal, pick_counterfactuals, token_replace, McqConfig, NegativeError,
    NegativeSet, NonOptimalConfig, ReplaceConfig, ReplaceMode, Strategy,
};
use crate::objective::{finite_diff_check, EncodedExample, GradCheckOptions, GradCheckReport, ObjectiveError};
use crate::trainer::{
    build_vocab, mean_margin, train, CheckpointInfo, EpochRecord, NegativeConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Negatives(#[from] NegativeError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Provenance attached to every JSON report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub tool: String,
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
}

/// A report body together with its [`Stamp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub stamp: Stamp,
    pub report: T,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub seed: u64,
    /// File name relative to the manifest's directory, mapped to its sha256.
    pub artifacts: BTreeMap<String, String>,
}

/// A validated config with its digest.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub digest: String,
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let digest = config.digest();
        Ok(Context { config, digest })
    }

    pub fn seed(&self) -> u64 {
        self.config.train.seed
    }

    pub fn stamp(&self) -> Stamp {
        Stamp {
            tool: "infergap".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_digest: self.digest.clone(),
            seed: self.seed(),
        }
    }

    fn stamped<T>(&self, report: T) -> Stamped<T> {
        Stamped {
            stamp: self.stamp(),
            report,
        }
    }

    /// Writes a stamped JSON report and records it in the manifest.
    pub fn write_report<T: Serialize>(&self, path: &Path, report: &T) -> Result<String> {
        let digest = write_json(path, &self.stamped(report)).map_err(io_err(path))?;
        self.record(path, &digest)?;
        Ok(digest)
    }

    pub fn write_records<T: Serialize>(&self, path: &Path, items: &[T]) -> Result<String> {
        let digest = write_jsonl(path, items).map_err(io_err(path))?;
        self.record(path, &digest)?;
        Ok(digest)
    }

    /// Adds `path` to the `manifest.json` next to it.
    pub fn record(&self, path: &Path, digest: &str) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let name = path
            .file_name()
            .ok_or_else(|| PipelineError::Invalid(format!("{} has no file name", path.display())))?
            .to_string_lossy()
            .into_owned();
        if name == MANIFEST {
            return Ok(());
        }
        let mpath = dir.join(MANIFEST);
        let mut manifest: Manifest = match fs::read_to_string(&mpath) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        if manifest.config_digest != self.digest || manifest.seed != self.seed() {
            manifest = Manifest {
                config_digest: self.digest.clone(),
                seed: self.seed(),
                artifacts: BTreeMap::new(),
            };
        }
        manifest.artifacts.insert(name, digest.to_string());
        write_json(&mpath, &manifest).map_err(io_err(&mpath))?;
        Ok(())
    }
}

pub const MANIFEST: &str = "manifest.json";

fn load_examples(path: &Path, format: DatasetFormat) -> Result<Vec<InferenceExample>> {
    let examples = load_dataset(path, format)?;
    if examples.is_empty() {
        return Err(PipelineError::Invalid(format!("{} contains no examples", path.display())));
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub input: String,
    pub format: DatasetFormat,
    pub count: usize,
    pub by_question: BTreeMap<String, usize>,
    pub by_difficulty: BTreeMap<String, usize>,
    pub unlabeled_difficulty: usize,
    pub output_sha256: String,
}

/// Loads and validates a dataset and writes it as canonical JSONL.
pub fn ingest(ctx: &Context, input: &Path, format: DatasetFormat, out: &Path) -> Result<IngestReport> {
    let examples = load_examples(input, format)?;
    let records: Vec<CanonicalRecord> = examples.iter().map(|e| CanonicalRecord::from_example(e, None)).collect();
    let digest = ctx.write_records(out, &records)?;
    let mut by_question = BTreeMap::new();
    let mut by_difficulty = BTreeMap::new();
    let mut unlabeled = 0;
    for e in &examples {
        *by_question.entry(e.question.as_str().to_string()).or_insert(0) += 1;
        match e.difficulty {
            Some(d) => *by_difficulty.entry(d.as_str().to_string()).or_insert(0) += 1,
            None => unlabeled += 1,
        }
    }
    Ok(IngestReport {
        input: input.display().to_string(),
        format,
        count: examples.len(),
        by_question,
        by_difficulty,
        unlabeled_difficulty: unlabeled,
        output_sha256: digest,
    })
}

// ---------------------------------------------------------------------------
// train

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const FINAL_CHECKPOINT_FILE: &str = "final_checkpoint.json";
pub const STEP_LOG_FILE: &str = "step_log.jsonl";
pub const EPOCH_LOG_FILE: &str = "epochs.jsonl";
pub const CHECKPOINT_INFO_FILE: &str = "checkpoint_info.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best: CheckpointInfo,
    pub total_steps: usize,
    pub epochs: Vec<EpochRecord>,
    /// Validation margin of the selected checkpoint against stored counterfactuals.
    pub validation_margin: f64,
}

fn save_checkpoint(ctx: &Context, model: &ToyBackend, path: &Path) -> Result<String> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    ToyCheckpoint::from_backend(model, Some(ctx.digest.clone())).save(path)?;
    let digest = sha256_hex(&fs::read(path).map_err(io_err(path))?);
    ctx.record(path, &digest)?;
    Ok(digest)
}

pub fn load_model(path: &Path) -> Result<ToyBackend> {
    Ok(ToyCheckpoint::load(path)?.into_backend()?)
}

/// Trains on already loaded examples and writes checkpoints and logs to `out_dir`.
pub fn train_examples(ctx: &Context, train_set: &[InferenceExample], valid_set: &[InferenceExample], out_dir: &Path) -> Result<TrainSummary> {
    let cfg = &ctx.config.train;
    let outcome = train(cfg, train_set, valid_set)?;
    save_checkpoint(ctx, &outcome.model, &out_dir.join(CHECKPOINT_FILE))?;
    save_checkpoint(ctx, &outcome.final_model, &out_dir.join(FINAL_CHECKPOINT_FILE))?;
    ctx.write_records(&out_dir.join(STEP_LOG_FILE), &outcome.log)?;
    ctx.write_records(&out_dir.join(EPOCH_LOG_FILE), &outcome.epochs)?;
    let mut best = outcome.best.clone();
    best.path = Some(CHECKPOINT_FILE.into());
    ctx.write_report(&out_dir.join(CHECKPOINT_INFO_FILE), &best)?;
    Ok(TrainSummary {
        best,
        total_steps: outcome.total_steps,
        epochs: outcome.epochs,
        validation_margin: mean_margin(&outcome.model, valid_set, cfg.template),
    })
}

pub fn train_files(ctx: &Context, train_path: &Path, valid_path: &Path, format: DatasetFormat, out_dir: &Path) -> Result<TrainSummary> {
    let train_set = load_examples(train_path, format)?;
    let valid_set = load_examples(valid_path, format)?;
    train_examples(ctx, &train_set, &valid_set, out_dir)
}

// ---------------------------------------------------------------------------
// generate

/// Decodes one answer per example. Top-k seeds are derived per example id.
pub fn generate_records<B: ModelBackend + ?Sized>(ctx: &Context, model: &B, examples: &[InferenceExample]) -> Result<Vec<CanonicalRecord>> {
    let vocab = model.vocab();
    let dc = &ctx.config.decode;
    examples
        .iter()
        .map(|e| {
            let input = vocab.encode(&prepare_input(e, ctx.config.train.template).text);
            let seed = derive_seed(ctx.seed(), &format!("generate/{}", e.id));
            let ids = generate(model, &input, dc.decode(seed), dc.max_len)?;
            Ok(CanonicalRecord::from_example(e, Some(vocab.decode(&ids))))
        })
        .collect()
}

pub fn generate_file(ctx: &Context, checkpoint: &Path, input: &Path, format: DatasetFormat, out: &Path) -> Result<usize> {
    let model = load_model(checkpoint)?;
    let examples = load_examples(input, format)?;
    let records = generate_records(ctx, &model, &examples)?;
    ctx.write_records(out, &records)?;
    Ok(records.len())
}

// ---------------------------------------------------------------------------
// perturb

/// One negative set per example. `model` scores the generation and
/// replacement strategies; without one, an untrained backend over the
/// examples' vocabulary is used.
pub fn perturb_examples(
    ctx: &Context,
    model: Option<ToyBackend>,
    examples: &[InferenceExample],
    negatives: &NegativeConfig,
    seed: u64,
) -> Result<Vec<NegativeSet>> {
    let t = &ctx.config.train;
    let model = || {
        model.clone().unwrap_or_else(|| {
            ToyBackend::random(build_vocab(examples, t.template), t.dim, t.seed, t.init_scale)
        })
    };
    let replace = |mode: ReplaceMode, scorer: &ToyBackend| -> Result<Vec<NegativeSet>> {
        let cfg = ReplaceConfig {
            threshold: negatives.threshold,
            k: negatives.k,
            mode,
            m: negatives.m,
            seed,
        };
        Ok(examples
            .iter()
            .map(|e| token_replace(scorer, e, t.template, &cfg))
            .collect::<std::result::Result<_, _>>()?)
    };
    match negatives.strategy {
        Strategy::Counterfactual => Ok(examples
            .iter()
            .map(|e| pick_counterfactuals(e, negatives.m, seed))
            .collect::<std::result::Result<_, _>>()?),
        Strategy::NonOptimal => {
            let backend = model();
            let cfg = NonOptimalConfig {
                m: negatives.m,
                k: negatives.k,
                attempts: negatives.attempts,
                max_len: negatives.max_len,
                seed,
            };
            Ok(examples
                .iter()
                .map(|e| generate_nonoptimal(&backend, e, t.template, &cfg))
                .collect::<std::result::Result<_, _>>()?)
        }
        Strategy::ReplaceZs => replace(ReplaceMode::Zs, &model()),
        Strategy::ReplaceMcq => {
            let scorer = fit_mcq_scorer(&model(), examples, t.template, &McqConfig::default())?;
            replace(ReplaceMode::Mcq, &scorer)
        }
        Strategy::InBatch => Err(PipelineError::Invalid(
            "in_batch negatives depend on training batches; use train with lambda_b > 0".into(),
        )),
    }
}

pub fn perturb_file(
    ctx: &Context,
    checkpoint: Option<&Path>,
    input: &Path,
    format: DatasetFormat,
    negatives: &NegativeConfig,
    seed: u64,
    out: &Path,
) -> Result<Vec<NegativeSet>> {
    let model = checkpoint.map(load_model).transpose()?;
    let examples = load_examples(input, format)?;
    let sets = perturb_examples(ctx, model, &examples, negatives, seed)?;
    ctx.write_records(out, &sets)?;
    Ok(sets)
}

// ---------------------------------------------------------------------------
// score

/// A hypothesis/reference pair with whatever labels its source carried.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub id: String,
    pub hypothesis: String,
    pub reference: String,
    pub difficulty: Option<Difficulty>,
    pub question: Option<QuestionType>,
}

enum TextSource {
    Records(Vec<CanonicalRecord>),
    Lines(Vec<String>),
}

fn read_source(path: &Path) -> Result<TextSource> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.trim_start().starts_with('{') {
        Ok(TextSource::Records(load_canonical_records(path)?))
    } else {
        Ok(TextSource::Lines(text.lines().map(str::to_string).collect()))
    }
}

fn generated_of(r: &CanonicalRecord) -> Result<String> {
    r.generated
        .clone()
        .ok_or_else(|| PipelineError::Invalid(format!("record `{}` has no `generated` field", r.id)))
}

/// Pairs hypotheses with references. Each file is either line-aligned plain
/// text or canonical JSONL; hypotheses come from the `generated` field and
/// references from `answer`. Without `--ref`, a JSONL hypothesis file is
/// scored against its own answers.
pub fn load_pairs(hyp: &Path, reference: Option<&Path>) -> Result<Vec<LabeledPair>> {
    let hyp_src = read_source(hyp)?;
    let ref_src = reference.map(read_source).transpose()?;
    let pairs = match (hyp_src, ref_src) {
        (TextSource::Records(h), None) => h
            .iter()
            .map(|r| {
                Ok(LabeledPair {
                    id: r.id.clone(),
                    hypothesis: generated_of(r)?,
                    reference: r.answer.clone(),
                    difficulty: r.difficulty,
                    question: Some(r.question),
                })
            })
            .collect::<Result<Vec<_>>>()?,
        (TextSource::Lines(_), None) => {
            return Err(PipelineError::Invalid("plain-text hypotheses need a reference file".into()))
        }
        (TextSource::Records(h), Some(TextSource::Records(r))) => {
            let refs: BTreeMap<&str, &CanonicalRecord> = r.iter().map(|x| (x.id.as_str(), x)).collect();
            h.iter()
                .map(|x| {
                    let rr = refs
                        .get(x.id.as_str())
                        .ok_or_else(|| PipelineError::Invalid(format!("no reference for `{}`", x.id)))?;
                    Ok(LabeledPair {
                        id: x.id.clone(),
                        hypothesis: generated_of(x)?,
                        reference: rr.answer.clone(),
                        difficulty: rr.difficulty.or(x.difficulty),
                        question: Some(rr.question),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        (h, Some(r)) => {
            let hyps: Vec<(Option<&CanonicalRecord>, String)> = match &h {
                TextSource::Records(rs) => rs.iter().map(|x| Ok((Some(x), generated_of(x)?))).collect::<Result<_>>()?,
                TextSource::Lines(ls) => ls.iter().map(|l| (None, l.clone())).collect(),
            };
            let refs: Vec<(Option<&CanonicalRecord>, String)> = match &r {
                TextSource::Records(rs) => rs.iter().map(|x| (Some(x), x.answer.clone())).collect(),
                TextSource::Lines(ls) => ls.iter().map(|l| (None, l.clone())).collect(),
            };
            if hyps.len() != refs.len() {
                return Err(PipelineError::Invalid(format!(
                    "{} hypotheses but {} references",
                    hyps.len(),
                    refs.len()
                )));
            }
            hyps.into_iter()
                .zip(refs)
                .enumerate()
                .map(|(i, ((hr, h), (rr, r)))| {
                    let rec = rr.or(hr);
                    LabeledPair {
                        id: rec.map_or_else(|| format!("line-{:05}", i + 1), |x| x.id.clone()),
                        hypothesis: h,
                        reference: r,
                        difficulty: rec.and_then(|x| x.difficulty),
                        question: rec.map(|x| x.question),
                    }
                })
                .collect()
        }
    };
    if pairs.is_empty() {
        return Err(PipelineError::Invalid(format!("{} contains no hypotheses", hyp.display())));
    }
    Ok(pairs)
}

fn label_of(p: &LabeledPair, by: StratifyBy) -> Option<String> {
    match by {
        StratifyBy::Difficulty => p.difficulty.map(|d| d.as_str().to_string()),
        StratifyBy::Question => p.question.map(|q| q.as_str().to_string()),
    }
}

/// Corpus report with optional strata; pairs lacking the requested label are
/// left out of the strata and noted in the warnings.
pub fn score_pairs(pairs: &[LabeledPair], stratify_by: Option<StratifyBy>, per_example: bool) -> Result<MetricReport> {
    let scored: Vec<ScoredPair> = pairs
        .iter()
        .map(|p| ScoredPair {
            id: p.id.clone(),
            hypothesis: p.hypothesis.clone(),
            reference: p.reference.clone(),
        })
        .collect();
    let mut missing = 0;
    let labels: Option<BTreeMap<String, String>> = stratify_by.map(|by| {
        pairs
            .iter()
            .filter_map(|p| {
                let l = label_of(p, by);
                if l.is_none() {
                    missing += 1;
                }
                l.map(|l| (p.id.clone(), l))
            })
            .collect()
    });
    let mut report = score_corpus(&scored, labels.as_ref(), per_example)?;
    if missing > 0 {
        report.warnings.push(format!("{missing} pairs carry no stratum label"));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// agree and compare

pub fn load_judgments(path: &Path) -> Result<Vec<Judgment>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Invalid(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub judgments: usize,
    pub choice_totals: BTreeMap<Choice, usize>,
    /// Option 1 is the side of interest.
    pub summary: StratumReport,
}

pub fn agree(judgments: &[Judgment], rule: AggregationRule) -> Result<AgreementReport> {
    let labels: BTreeMap<String, String> = judgments.iter().map(|j| (j.item_id.clone(), "all".to_string())).collect();
    let report = stratified_compare(judgments, &labels, None, rule)?;
    let mut totals: BTreeMap<Choice, usize> = Choice::ALL.iter().map(|&c| (c, 0)).collect();
    for j in judgments {
        *totals.get_mut(&j.choice).expect("all choices present") += 1;
    }
    Ok(AgreementReport {
        judgments: judgments.len(),
        choice_totals: totals,
        summary: report.overall,
    })
}

/// Sentence-level score of `hyp` against `reference`.
pub fn sentence_score(metric: CompareMetric, hyp: &str, reference: &str) -> f64 {
    let h = TokenSequence::from_text(hyp);
    let r = TokenSequence::from_text(reference);
    let bleu = |n: usize| sentence_bleu(&h, &r, n).expect("order within 1..=4")[n - 1];
    match metric {
        CompareMetric::Bleu1 => bleu(1),
        CompareMetric::Bleu2 => bleu(2),
        CompareMetric::Bleu3 => bleu(3),
        CompareMetric::Bleu4 => bleu(4),
        CompareMetric::Meteor => meteor_lite(&h, &r),
        CompareMetric::RougeL => rouge_l(&h, &r),
    }
}

fn all_labels(by: Option<StratifyBy>) -> Option<Vec<String>> {
    by.map(|b| match b {
        StratifyBy::Difficulty => Difficulty::ALL.iter().map(|d| d.as_str().to_string()).collect(),
        StratifyBy::Question => QuestionType::ALL.iter().map(|q| q.as_str().to_string()).collect(),
    })
}

fn stratum_labels(records: &[CanonicalRecord], by: Option<StratifyBy>) -> Result<BTreeMap<String, String>> {
    records
        .iter()
        .map(|r| {
            let label = match by {
                None => Some("all".to_string()),
                Some(StratifyBy::Difficulty) => r.difficulty.map(|d| d.as_str().to_string()),
                Some(StratifyBy::Question) => Some(r.question.as_str().to_string()),
            };
            label
                .map(|l| (r.id.clone(), l))
                .ok_or_else(|| PipelineError::Analysis(AnalysisError::Unlabeled(r.id.clone())))
        })
        .collect()
}

/// Compares system 1 against system 2 with human judgments when given,
/// otherwise with per-item automatic scores. Strata come from system 1's records.
pub fn compare(
    system_1: &[CanonicalRecord],
    system_2: &[CanonicalRecord],
    judgments: Option<&[Judgment]>,
    metric: CompareMetric,
    stratify_by: Option<StratifyBy>,
    rule: AggregationRule,
) -> Result<ComparisonReport> {
    let labels = stratum_labels(system_1, stratify_by)?;
    let requested = all_labels(stratify_by);
    if let Some(j) = judgments {
        return Ok(stratified_compare(j, &labels, requested.as_deref(), rule)?);
    }
    let scores = |records: &[CanonicalRecord]| -> Result<BTreeMap<String, f64>> {
        records
            .iter()
            .map(|r| Ok((r.id.clone(), sentence_score(metric, &generated_of(r)?, &r.answer))))
            .collect()
    };
    Ok(stratified_compare_scores(
        metric.as_str(),
        &scores(system_1)?,
        &scores(system_2)?,
        &labels,
        requested.as_deref(),
    )?)
}

// ---------------------------------------------------------------------------
// gradcheck

/// Checks the composite-loss gradient on a synthetic batch of 4 examples
/// with 4 counterfactual negatives each.
pub fn gradcheck(ctx: &Context, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let t = &ctx.config.train;
    let examples = synthetic::generate(4, seed, "gradcheck");
    let vocab = build_vocab(&examples, t.template);
    let model = ToyBackend::random(vocab, t.dim.min(16), seed, 0.5);
    let batch = examples
        .iter()
        .map(|e| {
            let negs = pick_counterfactuals(e, 4, seed)?;
            Ok(EncodedExample::new(model.vocab(), e, t.template, &negs.negatives))
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = GradCheckOptions {
        tol,
        seed,
        ..GradCheckOptions::default()
    };
    Ok(finite_diff_check(&model, &batch, &t.loss, &opts)?)
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub name: String,
    pub config_digest: String,
    pub strategy: Strategy,
    pub m: usize,
    pub lambda_b: f64,
    pub lambda_s: f64,
    pub best: CheckpointInfo,
    pub validation_margin: f64,
    pub score: Option<MetricReport>,
}

/// Trains one run per grid point under `out_dir/<name>` and scores greedy
/// generations on the validation set.
pub fn sweep(ctx: &Context, train_set: &[InferenceExample], valid_set: &[InferenceExample], out_dir: &Path) -> Result<Vec<SweepRun>> {
    let mut base = ctx.config.clone();
    base.paths.out_dir = out_dir.to_path_buf();
    let mut runs = Vec::new();
    for (name, cfg) in base.expand_sweep() {
        log::info!("sweep run {name}");
        let run_ctx = Context::new(cfg)?;
        let dir = run_ctx.config.paths.out_dir.clone();
        let summary = train_examples(&run_ctx, train_set, valid_set, &dir)?;
        let model = load_model(&dir.join(CHECKPOINT_FILE))?;
        let generations = generate_records(&run_ctx, &model, valid_set)?;
        run_ctx.write_records(&dir.join("generations.jsonl"), &generations)?;
        let pairs = records_to_pairs(&generations)?;
        let score = score_pairs(&pairs, run_ctx.config.report.stratify_by, false)?;
        run_ctx.write_report(&dir.join("scores.json"), &score)?;
        let t = &run_ctx.config.train;
        runs.push(SweepRun {
            name,
            config_digest: run_ctx.digest.clone(),
            strategy: t.negatives.strategy,
            m: t.negatives.m,
            lambda_b: t.loss.lambda_b,
            lambda_s: t.loss.lambda_s,
            best: summary.best,
            validation_margin: summary.validation_margin,
            score: Some(score),
        });
    }
    ctx.write_report(&out_dir.join("sweep.json"), &runs)?;
    Ok(runs)
}

fn records_to_pairs(records: &[CanonicalRecord]) -> Result<Vec<LabeledPair>> {
    records
        .iter()
        .map(|r| {
            Ok(LabeledPair {
                id: r.id.clone(),
                hypothesis: generated_of(r)?,
                reference: r.answer.clone(),
                difficulty: r.difficulty,
                question: Some(r.question),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// full run

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Train,
    Generate,
    Perturb,
    Score,
    Compare,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Train,
        Stage::Generate,
        Stage::Perturb,
        Stage::Score,
        Stage::Compare,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub out_dir: String,
    pub stages: Vec<Stage>,
    pub train: Option<TrainSummary>,
    pub baseline: Option<TrainSummary>,
    pub score: Option<MetricReport>,
    pub comparison: Option<ComparisonReport>,
    pub manifest: Manifest,
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| PipelineError::Invalid(format!("paths.{key} is required for this run")))
}

/// Runs the requested stages in order under `paths.out_dir`. The compare
/// stage pits the configured model against an NLL-only baseline trained
/// with the same settings.
pub fn run_pipeline(ctx: &Context, stages: &[Stage]) -> Result<PipelineSummary> {
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let cfg = &ctx.config;
    let out = cfg.paths.out_dir.clone();
    let data = out.join("data");
    let train_path = required(&cfg.paths.train, "train")?;
    let valid_path = required(&cfg.paths.valid, "valid")?;
    let test_path = cfg.paths.test.as_deref().unwrap_or(valid_path);
    let has = |s: Stage| stages.contains(&s);

    let (train_set, valid_set, test_set) = if has(Stage::Ingest) {
        let mut sets = Vec::new();
        for (name, path) in [("train", train_path), ("valid", valid_path), ("test", test_path)] {
            let target = data.join(format!("{name}.jsonl"));
            let report = ingest(ctx, path, cfg.paths.format, &target)?;
            ctx.write_report(&data.join(format!("{name}_ingest.json")), &report)?;
            sets.push(load_examples(&target, DatasetFormat::CanonicalJsonl)?);
        }
        let test = sets.pop().expect("three sets");
        let valid = sets.pop().expect("three sets");
        (sets.pop().expect("three sets"), valid, test)
    } else {
        (
            load_examples(train_path, cfg.paths.format)?,
            load_examples(valid_path, cfg.paths.format)?,
            load_examples(test_path, cfg.paths.format)?,
        )
    };

    let model_dir = out.join("model");
    let mut summary = PipelineSummary {
        out_dir: out.display().to_string(),
        stages: stages.clone(),
        train: None,
        baseline: None,
        score: None,
        comparison: None,
        manifest: Manifest::default(),
    };
    if has(Stage::Train) {
        summary.train = Some(train_examples(ctx, &train_set, &valid_set, &model_dir)?);
    }
    let model_path = model_dir.join(CHECKPOINT_FILE);
    let model = || load_model(&model_path);
    let generations_path = out.join("generations.jsonl");
    if has(Stage::Generate) {
        let records = generate_records(ctx, &model()?, &test_set)?;
        ctx.write_records(&generations_path, &records)?;
    }
    if has(Stage::Perturb) {
        let trained = if model_path.exists() { Some(model()?) } else { None };
        let sets = perturb_examples(ctx, trained, &train_set, &cfg.train.negatives, ctx.seed())?;
        ctx.write_records(&out.join("negatives.jsonl"), &sets)?;
    }
    if has(Stage::Score) {
        let pairs = load_pairs(&generations_path, None)?;
        let report = score_pairs(&pairs, cfg.report.stratify_by, cfg.report.per_example)?;
        ctx.write_report(&out.join("scores.json"), &report)?;
        summary.score = Some(report);
    }
    if has(Stage::Compare) {
        let mut base_cfg = cfg.clone();
        base_cfg.train.loss.lambda_b = 0.0;
        base_cfg.train.loss.lambda_s = 0.0;
        let base_ctx = Context::new(base_cfg)?;
        let base_dir = out.join("baseline");
        summary.baseline = Some(train_examples(&base_ctx, &train_set, &valid_set, &base_dir)?);
        let base_model = load_model(&base_dir.join(CHECKPOINT_FILE))?;
        let base_gen = generate_records(&base_ctx, &base_model, &test_set)?;
        base_ctx.write_records(&base_dir.join("generations.jsonl"), &base_gen)?;
        let ours = load_canonical_records(&generations_path)?;
        let report = compare(
            &ours,
            &base_gen,
            None,
            cfg.report.compare_metric,
            cfg.report.stratify_by,
            AggregationRule::PerJudgment,
        )?;
        ctx.write_report(&out.join("comparison.json"), &report)?;
        summary.comparison = Some(report);
    }
    ctx.write_report(&out.join("config.json"), &cfg)?;
    let mpath = out.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    summary.manifest = serde_json::from_str(&text).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    Ok(summary)
}
