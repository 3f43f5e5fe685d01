//! Token-level NLL, in-batch and per-sample contrastive losses, their
//! weighted sum, and a central-difference gradient check.

mod contrastive;
mod gradcheck;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Gradients, TokenId, TrainableBackend, Vocabulary, EOS};
use crate::corpus::{prepare_input, InferenceExample, TemplateId};

pub use contrastive::{cl_batch_loss, cl_sample_loss, cosine, cosine_with_grad, BatchLoss, SampleLoss};
pub use gradcheck::{check_gradients, finite_diff_check, GradCheckEntry, GradCheckOptions, GradCheckReport};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("loss weight must be non-negative and finite, got {0}")]
    BadWeight(f64),
    #[error("zero or non-finite vector: {0}")]
    ZeroVector(String),
    #[error("per-sample contrastive loss needs at least one negative")]
    NoNegatives,
    #[error("in-batch contrastive loss needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("example `{0}` has no negatives but lambda_s > 0")]
    MissingNegatives(String),
    #[error("example `{0}` has an empty answer")]
    EmptyAnswer(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("micro-batch size must be at least 1")]
    BadMicroBatch,
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau_b: f64,
    pub tau_s: f64,
    pub lambda_b: f64,
    pub lambda_s: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau_b: 0.1,
            tau_s: 2.5,
            lambda_b: 0.5,
            lambda_s: 0.5,
        }
    }
}

impl LossConfig {
    /// Plain maximum likelihood.
    pub fn nll_only() -> Self {
        LossConfig {
            lambda_b: 0.0,
            lambda_s: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for tau in [self.tau_b, self.tau_s] {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(ObjectiveError::NonPositiveTemperature(tau));
            }
        }
        for w in [self.lambda_b, self.lambda_s] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(ObjectiveError::BadWeight(w));
            }
        }
        Ok(())
    }
}

/// One training example as token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub id: String,
    pub input: Vec<TokenId>,
    /// Gold answer tokens without EOS; this is what gets embedded.
    pub answer: Vec<TokenId>,
    pub negatives: Vec<Vec<TokenId>>,
}

impl EncodedExample {
    pub fn new(vocab: &Vocabulary, example: &InferenceExample, template: TemplateId, negatives: &[String]) -> Self {
        EncodedExample {
            id: example.id.clone(),
            input: vocab.encode(&prepare_input(example, template).text),
            answer: vocab.encode(&example.answer),
            negatives: negatives.iter().map(|n| vocab.encode(n)).collect(),
        }
    }

    /// The scored target sequence: answer tokens followed by EOS.
    pub fn target(&self) -> Vec<TokenId> {
        let mut t = self.answer.clone();
        t.push(EOS);
        t
    }
}

/// -sum_j log p(a_j | a_<j, X) over the answer plus EOS, with its gradient.
pub fn nll_loss<B: TrainableBackend + ?Sized>(backend: &B, example: &EncodedExample) -> Result<(f64, Gradients)> {
    if example.answer.is_empty() {
        return Err(ObjectiveError::EmptyAnswer(example.id.clone()));
    }
    let mut grads = backend.zero_grads();
    let value = backend.sequence_nll_with_grad(&example.input, &example.target(), 1.0, &mut grads);
    Ok((value, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Mean over the batch of the summed token NLL.
    pub nll: f64,
    /// In-batch contrastive loss divided by the batch size; 0 when lambda_b = 0.
    pub cl_b: f64,
    /// Mean per-sample contrastive loss over examples that carry negatives;
    /// 0 when lambda_s = 0.
    pub cl_s: f64,
    pub total: f64,
    /// Number of answer tokens scored, EOS included.
    pub tokens: usize,
    pub grads: Gradients,
}

/// Composite loss over `batch`; see [`total_loss_chunked`].
pub fn total_loss<B: TrainableBackend + ?Sized>(backend: &B, batch: &[EncodedExample], config: &LossConfig) -> Result<LossBreakdown> {
    total_loss_chunked(backend, batch, config, batch.len().max(1))
}

/// Composite loss with gradient accumulation: NLL and per-sample terms are
/// computed in chunks of `micro_batch` examples into their own buffers and
/// summed, while the in-batch term always spans the whole batch.
pub fn total_loss_chunked<B: TrainableBackend + ?Sized>(
    backend: &B,
    batch: &[EncodedExample],
    config: &LossConfig,
    micro_batch: usize,
) -> Result<LossBreakdown> {
    config.validate()?;
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    if micro_batch == 0 {
        return Err(ObjectiveError::BadMicroBatch);
    }
    for ex in batch {
        if ex.answer.is_empty() {
            return Err(ObjectiveError::EmptyAnswer(ex.id.clone()));
        }
        if config.lambda_s > 0.0 && ex.negatives.is_empty() {
            return Err(ObjectiveError::MissingNegatives(ex.id.clone()));
        }
    }
    let b = batch.len() as f64;
    let with_negs = batch.iter().filter(|e| !e.negatives.is_empty()).count();
    // Terms with zero weight are skipped rather than reported.
    let mut grads = backend.zero_grads();

    let mut nll_sum = 0.0;
    let mut cl_s_sum = 0.0;
    let mut tokens = 0;
    for chunk in batch.chunks(micro_batch) {
        let mut g = backend.zero_grads();
        for ex in chunk {
            let target = ex.target();
            tokens += target.len();
            nll_sum += backend.sequence_nll_with_grad(&ex.input, &target, 1.0 / b, &mut g);
            if config.lambda_s == 0.0 || ex.negatives.is_empty() {
                continue;
            }
            let h_x = backend.embed_text(&ex.input).vector;
            let h_a = backend.embed_text(&ex.answer).vector;
            let h_n: Vec<Vec<f64>> = ex.negatives.iter().map(|n| backend.embed_text(n).vector).collect();
            let s = cl_sample_loss(&h_x, &h_a, &h_n, config.tau_s).map_err(|e| tag(e, &ex.id))?;
            cl_s_sum += s.value;
            let w = config.lambda_s / with_negs as f64;
            backend.embed_backward(&ex.input, &scaled(&s.grad_anchor, w), &mut g);
            backend.embed_backward(&ex.answer, &scaled(&s.grad_positive, w), &mut g);
            for (n, gn) in ex.negatives.iter().zip(&s.grad_negatives) {
                backend.embed_backward(n, &scaled(gn, w), &mut g);
            }
        }
        grads.add_scaled(&g, 1.0);
    }

    let mut cl_b = 0.0;
    if config.lambda_b > 0.0 {
        if batch.len() < 2 {
            return Err(ObjectiveError::BatchTooSmall(batch.len()));
        }
        let anchors: Vec<Vec<f64>> = batch.iter().map(|e| backend.embed_text(&e.input).vector).collect();
        let answers: Vec<Vec<f64>> = batch.iter().map(|e| backend.embed_text(&e.answer).vector).collect();
        let l = cl_batch_loss(&anchors, &answers, config.tau_b)?;
        cl_b = l.value / b;
        let w = config.lambda_b / b;
        for (ex, (ga, gp)) in batch.iter().zip(l.grad_anchors.iter().zip(&l.grad_answers)) {
            backend.embed_backward(&ex.input, &scaled(ga, w), &mut grads);
            backend.embed_backward(&ex.answer, &scaled(gp, w), &mut grads);
        }
    }

    let nll = nll_sum / b;
    let cl_s = if with_negs > 0 { cl_s_sum / with_negs as f64 } else { 0.0 };
    let total = nll + config.lambda_b * cl_b + config.lambda_s * cl_s;
    Ok(LossBreakdown {
        nll,
        cl_b,
        cl_s,
        total,
        tokens,
        grads,
    })
}

fn scaled(v: &[f64], w: f64) -> Vec<f64> {
    v.iter().map(|x| x * w).collect()
}

fn tag(e: ObjectiveError, id: &str) -> ObjectiveError {
    match e {
        ObjectiveError::ZeroVector(which) => ObjectiveError::ZeroVector(format!("{which} of example `{id}`")),
        other => other,
    }
}
