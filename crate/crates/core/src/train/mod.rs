//! Training loop with early stopping, plus evaluation and ablation.

mod ablate;
mod metrics;
mod optim;

pub use ablate::{ablate, ablation_csv, rechunk, AblationAxis, AblationRow, AxisSpec};
pub use metrics::{argmax, evaluate, ClassMetrics, EvalReport, NUM_CLASSES};
pub use optim::{adamw_step, lr_exponential, AdamWConfig, OptimizerState};

use serde::{Deserialize, Serialize};

use crate::corpus::{split_disjoint_subjects, AlignedSample, Corpus, TokenVocab};
use crate::error::{Error, Result};
use crate::graph::{extract_disfluency_keywords, DisfluencyVocabulary};
use crate::model::{Model, ModelConfig};
use crate::rng::Rng;

/// Samples per tape during training. Gradients from micro-batches are
/// accumulated (scaled by their share of the batch) before each optimizer
/// step, keeping tapes small enough to stay cache-resident; the resulting
/// update is bit-for-bit the full-batch one up to float associativity,
/// fixed here by the sequential accumulation order.
const MICRO_BATCH: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many consecutive epochs without a validation-F1
    /// improvement.
    pub patience: usize,
    pub lr: f64,
    /// Per-epoch exponential decay factor. The reported full-scale setting
    /// of 0.001 collapses the rate after one epoch; the desk default keeps a
    /// usable schedule and the reference value stays available via config.
    pub lr_gamma: f64,
    pub weight_decay: f64,
    /// Train-side sample share for the internal subject-disjoint split.
    pub split_ratio: f64,
    pub seed: u64,
    /// Window length used when (re)chunking sessions.
    pub chunk_tokens: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            patience: 7,
            lr: 1e-3,
            lr_gamma: 0.95,
            weight_decay: 0.01,
            split_ratio: 0.8,
            seed: 0,
            chunk_tokens: 50,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The reported full-scale protocol: lr 1e-5, 768-wide model.
    pub fn paper_scale() -> Self {
        TrainConfig {
            lr: 1e-5,
            model: ModelConfig::paper_scale(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::invalid("epochs, batch_size, patience must be positive"));
        }
        if self.patience > self.epochs {
            return Err(Error::invalid(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if self.lr <= 0.0 || self.lr_gamma <= 0.0 {
            return Err(Error::invalid("lr and lr_gamma must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight decay must be nonnegative"));
        }
        if !(0.0 < self.split_ratio && self.split_ratio < 1.0) {
            return Err(Error::invalid("split ratio must lie in (0,1)"));
        }
        if self.chunk_tokens == 0 {
            return Err(Error::invalid("chunk_tokens must be positive"));
        }
        self.model.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose snapshot was restored.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    /// Validation report of the restored best model.
    pub report: EvalReport,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_loss,val_precision,val_recall,val_f1\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.lr, r.train_loss, r.val_loss, r.val_precision, r.val_recall, r.val_f1
        ));
    }
    out
}

/// Mean cross-entropy computed from plain logit values.
fn mean_cross_entropy(logits: &[[f64; 4]], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        total -= row[y] - mx - z.ln();
    }
    total / labels.len() as f64
}

fn val_metrics(model: &Model, val: &[AlignedSample]) -> Result<(f64, EvalReport)> {
    let logits = model.eval_logits(val)?;
    let labels: Vec<usize> = val.iter().map(|s| s.label.index()).collect();
    let loss = mean_cross_entropy(&logits, &labels);
    let preds: Vec<usize> = logits.iter().map(argmax).collect();
    Ok((loss, EvalReport::from_predictions(&labels, &preds)?))
}

/// Train on explicit train/validation sample sets. The token and keyword
/// vocabularies come from the training split only. Returns the model at its
/// best validation weighted F1.
pub fn train(
    train_samples: &[AlignedSample],
    val_samples: &[AlignedSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_samples.is_empty() {
        return Err(Error::data("empty train split"));
    }
    if val_samples.is_empty() {
        return Err(Error::data("empty validation split"));
    }

    let vocab = TokenVocab::build(train_samples);
    let keywords = if config.model.graph_active() {
        extract_disfluency_keywords(train_samples, config.model.keyword_count)?
    } else {
        DisfluencyVocabulary::new(Vec::new())?
    };
    let mut model = Model::new(config.model.clone(), vocab, keywords, config.seed)?;

    let mut root = Rng::seed(config.seed);
    let mut shuffle_rng = root.fork(0x7355);
    let mut dropout_rng = root.fork(0xd607);

    let mut opt_state = OptimizerState::new(&model.store);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snapshot = model.store.snapshot();
    let mut stale_epochs = 0usize;

    for epoch in 1..=config.epochs {
        let lr = lr_exponential(config.lr, config.lr_gamma, epoch - 1);
        let hp = AdamWConfig {
            lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        };

        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut batch_grads: Option<Vec<Vec<f64>>> = None;
            let mut batch_loss = 0.0;
            for micro in batch.chunks(MICRO_BATCH) {
                let refs: Vec<&AlignedSample> =
                    micro.iter().map(|&i| &train_samples[i]).collect();
                let mut fwd = model.forward_batch(&refs, true, &mut dropout_rng)?;
                fwd.tape.backward(fwd.loss)?;
                let grads = model.store.collect_grads(&fwd.tape, &fwd.binding)?;
                let share = micro.len() as f64 / batch.len() as f64;
                batch_loss += fwd.loss_value * share;
                match &mut batch_grads {
                    None => {
                        let mut scaled = grads;
                        for g in &mut scaled {
                            for v in g.iter_mut() {
                                *v *= share;
                            }
                        }
                        batch_grads = Some(scaled);
                    }
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x += share * y;
                            }
                        }
                    }
                }
            }
            let grads = batch_grads.expect("non-empty batch");
            adamw_step(&mut model.store, &grads, &mut opt_state, &hp)?;
            loss_sum += batch_loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_samples.len() as f64;

        let (val_loss, report) = val_metrics(&model, val_samples)?;
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_precision: report.weighted_precision,
            val_recall: report.weighted_recall,
            val_f1: report.weighted_f1,
        });

        if report.weighted_f1 > best_f1 {
            best_f1 = report.weighted_f1;
            best_epoch = epoch;
            best_snapshot = model.store.snapshot();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                break;
            }
        }
    }

    model.store.restore(&best_snapshot);
    let (_, report) = val_metrics(&model, val_samples)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_f1: best_f1,
        report,
    })
}

/// Split the corpus subject-disjointly, then train on the parts.
pub fn train_split(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    let (train_part, val_part) = split_disjoint_subjects(corpus, config.split_ratio, config.seed)?;
    train(&train_part.samples, &val_part.samples, config)
}
