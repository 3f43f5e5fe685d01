//! Deterministic SGD loop: seeded shuffles, gradient accumulation up to an
//! effective batch, linear learning-rate decay and best-perplexity selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ModelBackend, ToyBackend, TrainableBackend, Vocabulary, DEFAULT_INIT_SCALE};
use crate::corpus::{prepare_input, InferenceExample, TemplateId};
use crate::negatives::{
    derive_seed, fit_mcq_scorer, generate_nonoptimal, pick_counterfactuals, token_replace, McqConfig, NegativeError,
    NegativeSet, NonOptimalConfig, ReplaceConfig, ReplaceMode, Strategy,
};
use crate::objective::{cosine, total_loss_chunked, EncodedExample, LossConfig, ObjectiveError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("non-finite loss at epoch {} step {}: {record:?}", record.epoch, record.step)]
    NonFinite { record: StepRecord },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Negatives(#[from] NegativeError),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// How per-sample negatives are produced during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegativeConfig {
    pub strategy: Strategy,
    pub m: usize,
    pub k: usize,
    pub threshold: f64,
    pub attempts: usize,
    pub max_len: usize,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        NegativeConfig {
            strategy: Strategy::Counterfactual,
            m: 4,
            k: 10,
            threshold: 0.75,
            attempts: 5,
            max_len: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub effective_batch: usize,
    pub micro_batch: usize,
    pub lr0: f64,
    pub warmup_steps: usize,
    pub max_epochs: usize,
    pub loss: LossConfig,
    pub negatives: NegativeConfig,
    pub seed: u64,
    pub template: TemplateId,
    /// Embedding width of the toy backend.
    pub dim: usize,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            effective_batch: 64,
            micro_batch: 8,
            lr0: 1e-4,
            warmup_steps: 0,
            max_epochs: 10,
            loss: LossConfig::default(),
            negatives: NegativeConfig::default(),
            seed: 0,
            template: TemplateId::DefaultV1,
            dim: 32,
            init_scale: DEFAULT_INIT_SCALE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.effective_batch == 0 || self.micro_batch == 0 || self.effective_batch % self.micro_batch != 0 {
            return bad(format!(
                "micro_batch {} must divide effective_batch {}",
                self.micro_batch, self.effective_batch
            ));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be finite and non-negative, got {}", self.lr0));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.negatives.m == 0 {
            return bad("negatives.m must be at least 1".into());
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// lr0 * (1 - step / total_steps).
pub fn lr_at(step: usize, total_steps: usize, lr0: f64) -> f64 {
    assert!(total_steps >= 1 && step <= total_steps, "step {step} outside 0..={total_steps}");
    lr0 * (1.0 - step as f64 / total_steps as f64)
}

/// Linear warmup over `warmup` steps, then linear decay to 0 at `total_steps`.
pub fn scheduled_lr(step: usize, total_steps: usize, warmup: usize, lr0: f64) -> f64 {
    if step < warmup {
        lr0 * (step + 1) as f64 / warmup as f64
    } else {
        lr_at(step - warmup, total_steps.saturating_sub(warmup).max(1), lr0)
    }
}

/// exp(total answer NLL / total scored tokens), EOS included.
pub fn perplexity<B: ModelBackend + ?Sized>(backend: &B, dataset: &[EncodedExample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for ex in dataset {
        let t = ex.target();
        nll += backend.sequence_nll(&ex.input, &t);
        tokens += t.len();
    }
    Ok((nll / tokens as f64).exp())
}

/// Vocabulary over serialized inputs, answers and counterfactuals.
pub fn build_vocab(examples: &[InferenceExample], template: TemplateId) -> Vocabulary {
    let mut texts: Vec<String> = Vec::new();
    for e in examples {
        texts.push(prepare_input(e, template).text);
        texts.push(e.answer.clone());
        texts.extend(e.counterfactuals.iter().cloned());
    }
    Vocabulary::from_texts(texts.iter().map(String::as_str))
}

pub fn encode_examples(vocab: &Vocabulary, examples: &[InferenceExample], template: TemplateId) -> Vec<EncodedExample> {
    examples
        .iter()
        .map(|e| EncodedExample::new(vocab, e, template, &[]))
        .collect()
}

/// Mean over examples with counterfactuals of
/// sim(h_X, h_gold) - max over counterfactuals of sim(h_X, h_cf).
pub fn mean_margin<B: ModelBackend + ?Sized>(backend: &B, examples: &[InferenceExample], template: TemplateId) -> f64 {
    let vocab = backend.vocab();
    let mut sum = 0.0;
    let mut n = 0usize;
    for e in examples.iter().filter(|e| !e.counterfactuals.is_empty()) {
        let hx = backend.embed_text(&vocab.encode(&prepare_input(e, template).text)).vector;
        let gold = cosine(&hx, &backend.embed_text(&vocab.encode(&e.answer)).vector);
        let worst = e
            .counterfactuals
            .iter()
            .map(|c| cosine(&hx, &backend.embed_text(&vocab.encode(c)).vector))
            .fold(f64::NEG_INFINITY, f64::max);
        sum += gold - worst;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub nll: f64,
    pub cl_b: f64,
    pub cl_s: f64,
    pub total: f64,
    /// Examples whose own negatives were empty and fell back to in-batch answers.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub negative_fallbacks: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub validation_perplexity: f64,
    pub mean_total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub epoch: usize,
    pub step: usize,
    pub validation_perplexity: f64,
    pub path: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: CheckpointInfo,
    /// Parameters of the selected checkpoint.
    pub model: ToyBackend,
    /// Parameters after the last optimizer step.
    pub final_model: ToyBackend,
    pub log: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub total_steps: usize,
}

/// Negatives that are fixed for the whole run, keyed by example position.
fn static_negatives(
    config: &TrainConfig,
    initial: &ToyBackend,
    train: &[InferenceExample],
) -> Result<Option<Vec<NegativeSet>>> {
    let n = &config.negatives;
    let replace = |mode: ReplaceMode, scorer: &ToyBackend| -> Result<Vec<NegativeSet>> {
        let cfg = ReplaceConfig {
            threshold: n.threshold,
            k: n.k,
            mode,
            m: n.m,
            seed: config.seed,
        };
        Ok(train
            .iter()
            .map(|e| token_replace(scorer, e, config.template, &cfg))
            .collect::<std::result::Result<_, _>>()?)
    };
    Ok(match n.strategy {
        Strategy::Counterfactual => Some(
            train
                .iter()
                .map(|e| pick_counterfactuals(e, n.m, config.seed))
                .collect::<std::result::Result<_, _>>()?,
        ),
        Strategy::ReplaceZs => Some(replace(ReplaceMode::Zs, initial)?),
        Strategy::ReplaceMcq => {
            let scorer = fit_mcq_scorer(initial, train, config.template, &McqConfig::default())?;
            Some(replace(ReplaceMode::Mcq, &scorer)?)
        }
        Strategy::NonOptimal | Strategy::InBatch => None,
    })
}

fn nonoptimal_negatives(config: &TrainConfig, model: &ToyBackend, train: &[InferenceExample], epoch: usize) -> Result<Vec<NegativeSet>> {
    let n = &config.negatives;
    let cfg = NonOptimalConfig {
        m: n.m,
        k: n.k,
        attempts: n.attempts,
        max_len: n.max_len,
        seed: derive_seed(config.seed, &format!("non_optimal/{epoch}")),
    };
    Ok(train
        .iter()
        .map(|e| generate_nonoptimal(model, e, config.template, &cfg))
        .collect::<std::result::Result<_, _>>()?)
}

/// Trains a fresh [`ToyBackend`] over the vocabulary of `train`.
pub fn train(config: &TrainConfig, train: &[InferenceExample], valid: &[InferenceExample]) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = build_vocab(train, config.template);
    let initial = ToyBackend::random(vocab, config.dim, config.seed, config.init_scale);
    train_from(config, initial, train, valid)
}

/// Trains starting from `model`.
pub fn train_from(
    config: &TrainConfig,
    mut model: ToyBackend,
    train: &[InferenceExample],
    valid: &[InferenceExample],
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if valid.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    let uses_negatives = config.loss.lambda_s > 0.0;
    let needs_pairs = config.loss.lambda_b > 0.0;
    let vocab = model.vocab().clone();
    let base = encode_examples(&vocab, train, config.template);
    let valid_enc = encode_examples(&vocab, valid, config.template);
    let fixed = if uses_negatives {
        static_negatives(config, &model, train)?
    } else {
        None
    };

    let n = train.len();
    let eff = config.effective_batch;
    let mut batches_per_epoch = n.div_ceil(eff);
    // A trailing batch of one cannot form in-batch pairs.
    let drop_last = needs_pairs && n % eff == 1;
    if drop_last {
        batches_per_epoch -= 1;
    }
    if batches_per_epoch == 0 {
        return Err(TrainError::Config(format!(
            "{n} training examples cannot fill a batch of at least 2"
        )));
    }
    let total_steps = batches_per_epoch * config.max_epochs;

    let ppl0 = perplexity(&model, &valid_enc)?;
    log::info!("epoch 0: validation perplexity {ppl0:.6}");
    let mut best = CheckpointInfo {
        epoch: 0,
        step: 0,
        validation_perplexity: ppl0,
        path: None,
    };
    let mut best_model = model.clone();
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        steps: 0,
        validation_perplexity: ppl0,
        mean_total: None,
    }];
    let mut log = Vec::with_capacity(total_steps);
    let mut step = 0usize;

    for epoch in 1..=config.max_epochs {
        let negs = match (uses_negatives, config.negatives.strategy, &fixed) {
            (false, _, _) => None,
            (true, _, Some(f)) => Some(f.clone()),
            (true, Strategy::NonOptimal, None) => Some(nonoptimal_negatives(config, &model, train, epoch)?),
            (true, _, None) => None,
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("shuffle/{epoch}"))));
        let mut epoch_total = 0.0;
        for b in 0..batches_per_epoch {
            let idx = &order[b * eff..((b + 1) * eff).min(n)];
            let mut batch: Vec<EncodedExample> = idx.iter().map(|&i| base[i].clone()).collect();
            let mut fallbacks = 0;
            if uses_negatives {
                for (slot, &i) in idx.iter().enumerate() {
                    let own: Vec<String> = negs.as_ref().map(|s| s[i].negatives.clone()).unwrap_or_default();
                    let texts = if own.is_empty() {
                        if negs.is_some() {
                            fallbacks += 1;
                        }
                        idx.iter()
                            .enumerate()
                            .filter(|(s, _)| *s != slot)
                            .map(|(_, &j)| train[j].answer.clone())
                            .collect()
                    } else {
                        own
                    };
                    batch[slot].negatives = texts.iter().map(|t| vocab.encode(t)).collect();
                }
                if fallbacks > 0 {
                    log::warn!("epoch {epoch} step {step}: {fallbacks} examples fell back to in-batch negatives");
                }
            }
            let lr = scheduled_lr(step, total_steps, config.warmup_steps, config.lr0);
            let loss = total_loss_chunked(&model, &batch, &config.loss, config.micro_batch)?;
            let record = StepRecord {
                epoch,
                step,
                lr,
                batch_size: batch.len(),
                nll: loss.nll,
                cl_b: loss.cl_b,
                cl_s: loss.cl_s,
                total: loss.total,
                negative_fallbacks: fallbacks,
            };
            if !(loss.total.is_finite() && loss.grads.all_finite()) {
                log::error!("non-finite loss at epoch {epoch} step {step}");
                return Err(TrainError::NonFinite { record });
            }
            log::debug!("step {step}: lr {lr:.3e} total {:.6}", loss.total);
            epoch_total += loss.total;
            log.push(record);
            model.apply_gradients(&loss.grads, lr)?;
            step += 1;
        }
        let ppl = perplexity(&model, &valid_enc)?;
        log::info!("epoch {epoch}: validation perplexity {ppl:.6}");
        epochs.push(EpochRecord {
            epoch,
            steps: batches_per_epoch,
            validation_perplexity: ppl,
            mean_total: Some(epoch_total / batches_per_epoch as f64),
        });
        if ppl < best.validation_perplexity {
            best = CheckpointInfo {
                epoch,
                step,
                validation_perplexity: ppl,
                path: None,
            };
            best_model = model.clone();
        }
    }
    Ok(TrainOutcome {
        best,
        model: best_model,
        final_model: model,
        log,
        epochs,
        total_steps,
    })
}
