//! Deterministic training loop: Adam, stepped learning-rate decay, optional
//! per-sample augmentation.
//!
//! All randomness flows from `TrainConfig::seed` through three disjoint
//! branches of the stream tree (shuffling, dropout, augmentation), so adding
//! an augmenter never perturbs the shuffle or dropout sequences: a run with
//! an identity augmenter is bit-identical to a run with none.

use std::time::Instant;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{Adam, Model};
use crate::augment::ChainOp;
use crate::error::{Error, Result};
use crate::randaug::{rand_augment, RandAugmentConfig};
use crate::rng::RngStream;
use crate::series::{Dataset, TimeSeries};

// Stream-tree branch indices under the training root.
const BRANCH_SHUFFLE: u64 = 0;
const BRANCH_DROPOUT: u64 = 1;
const BRANCH_AUGMENT: u64 = 2;

/// Training hyperparameters: Adam with stepped learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Initial learning rate.
    pub lr0: f64,
    /// Multiplicative decay factor.
    pub lr_decay: f64,
    /// Apply the decay after every this many epochs.
    pub decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Root seed for shuffling, dropout, and augmentation streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            lr_decay: 0.9,
            decay_every: 5,
            batch_size: 100,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr_decay > 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidParameter("learning-rate settings must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParameter("Adam betas must be in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every == 0 {
            return Err(Error::InvalidParameter(
                "batch_size, epochs and decay_every must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based):
    /// `lr0 * decay^(epoch / decay_every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Mean training loss over the final epoch's batches.
    pub final_train_loss: f64,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn final_val_acc(&self) -> f64 {
        self.epochs.last().map(|e| e.val_acc).unwrap_or(0.0)
    }
}

/// A per-sample augmentation callback used during training.
///
/// Implementations must be pure given `(x, stream)`; the training loop hands
/// each sample a stream derived from `(epoch, sample index)` so augmented
/// batches vary across epochs yet reruns are reproducible.
pub trait Augmenter: Sync {
    fn augment(&self, x: &TimeSeries, stream: RngStream) -> Result<TimeSeries>;
}

impl Augmenter for [ChainOp] {
    fn augment(&self, x: &TimeSeries, stream: RngStream) -> Result<TimeSeries> {
        crate::augment::apply_chain(x, self, stream)
    }
}

impl Augmenter for Vec<ChainOp> {
    fn augment(&self, x: &TimeSeries, stream: RngStream) -> Result<TimeSeries> {
        crate::augment::apply_chain(x, self.as_slice(), stream)
    }
}

impl Augmenter for RandAugmentConfig {
    fn augment(&self, x: &TimeSeries, stream: RngStream) -> Result<TimeSeries> {
        rand_augment(x, self, stream)
    }
}

/// A batch of stacked samples plus labels.
pub struct Batch {
    pub inputs: Array3<f64>,
    pub labels: Vec<usize>,
}

/// Stack samples into a `[B, T, C]` tensor with their labels.
pub fn stack_batch(samples: &[&TimeSeries]) -> Batch {
    let b = samples.len();
    let (t, c) = (samples[0].num_steps(), samples[0].num_channels());
    let mut inputs = Array3::zeros((b, t, c));
    let mut labels = Vec::with_capacity(b);
    for (i, s) in samples.iter().enumerate() {
        inputs
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(s.values());
        labels.push(s.label().unwrap_or(0));
    }
    Batch { inputs, labels }
}

/// Mean softmax cross-entropy over the batch; also returns `dL/dlogits`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let b = logits.nrows();
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let label = labels[i];
        loss -= ((row[label] - max) - sum.ln()) / b as f64;
        for (j, e) in exps.iter().enumerate() {
            let p = e / sum;
            dlogits[[i, j]] = (p - if j == label { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    (loss, dlogits)
}

fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

const EVAL_CHUNK: usize = 256;

/// Eval-mode accuracy on a dataset.
pub fn evaluate(model: &Model, d: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for chunk in d.samples().chunks(EVAL_CHUNK) {
        let refs: Vec<&TimeSeries> = chunk.iter().collect();
        let batch = stack_batch(&refs);
        let logits = model.forward_eval(&batch.inputs)?;
        for (pred, label) in argmax_rows(&logits).into_iter().zip(&batch.labels) {
            if pred == *label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / d.len() as f64)
}

/// Eval-mode mean cross-entropy loss on a dataset.
pub fn evaluate_loss(model: &Model, d: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for chunk in d.samples().chunks(EVAL_CHUNK) {
        let refs: Vec<&TimeSeries> = chunk.iter().collect();
        let batch = stack_batch(&refs);
        let logits = model.forward_eval(&batch.inputs)?;
        let (loss, _) = softmax_cross_entropy(&logits, &batch.labels);
        total += loss * chunk.len() as f64;
    }
    Ok(total / d.len() as f64)
}

/// Train a model in place and report per-epoch statistics.
///
/// Each epoch shuffles the sample order, walks it in `batch_size` chunks
/// (final partial batch kept), optionally augments every sample with a fresh
/// derived stream, and takes one Adam step per batch at the scheduled rate.
/// A non-finite loss or gradient aborts with a diagnostic.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    augmenter: Option<&dyn Augmenter>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let started = Instant::now();
    if train_set.shape() != val_set.shape() {
        return Err(Error::ShapeMismatch(format!(
            "train shape {:?} != val shape {:?}",
            train_set.shape(),
            val_set.shape()
        )));
    }
    if train_set.num_classes() != model.classes() {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} classes, model expects {}",
            train_set.num_classes(),
            model.classes()
        )));
    }

    let root = RngStream::new(cfg.seed);
    let shuffle_root = root.derive(BRANCH_SHUFFLE);
    let dropout_root = root.derive(BRANCH_DROPOUT);
    let augment_root = root.derive(BRANCH_AUGMENT);

    let mut adam = Adam::new(model.num_params(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = shuffle_root.derive(epoch as u64).rng();
            order.shuffle(&mut rng);
        }

        let epoch_aug = augment_root.derive(epoch as u64);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut augmented: Vec<TimeSeries> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let sample = &train_set.samples()[i];
                let sample = match augmenter {
                    Some(a) => a.augment(sample, epoch_aug.derive(i as u64))?,
                    None => sample.clone(),
                };
                augmented.push(sample);
            }
            let refs: Vec<&TimeSeries> = augmented.iter().collect();
            let mut batch = stack_batch(&refs);
            // Labels come from the original samples; augmentation must never
            // change them, but the originals are authoritative.
            batch.labels = chunk.iter().map(|&i| train_set.samples()[i].label().unwrap()).collect();

            let (logits, cache) =
                model.forward_train(&batch.inputs, dropout_root.derive(epoch as u64).derive(batch_idx as u64))?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch}, batch {batch_idx}"
                )));
            }
            let grads = model.backward(&cache, &dlogits);
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient diverged at epoch {epoch}, batch {batch_idx}"
                )));
            }

            let mut params = model.params();
            adam.step(&mut params, &grads, lr);
            model.set_params(&params)?;

            loss_sum += loss * chunk.len() as f64;
            for (pred, label) in argmax_rows(&logits).into_iter().zip(&batch.labels) {
                if pred == *label {
                    correct += 1;
                }
            }
        }

        let record = EpochRecord {
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc: evaluate(model, val_set)?,
        };
        epochs.push(record);
    }

    let final_train_loss = epochs.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
    Ok(TrainReport {
        epochs,
        final_train_loss,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
