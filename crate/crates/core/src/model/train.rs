use super::{AttentionClassifier, Classifier, LinearTokenModel};
use crate::data::{
    build_masked_minibatch, dual_validation, mask_tokens, DatasetSplit, Label, LabeledExample, MetricKind,
};
use crate::rng::child;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaskingMode {
    Plain,
    /// Every training example masked at a fresh uniform ratio.
    OnlyMasking,
    /// Half of each batch masked (see [`build_masked_minibatch`]).
    #[default]
    MaskedFineTuning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    Plain,
    Masked,
    #[default]
    Dual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub masking: MaskingMode,
    #[serde(default)]
    pub validation: ValidationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            masking: MaskingMode::MaskedFineTuning,
            validation: ValidationMode::Dual,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
}

/// A token classifier that can take a gradient step on cross-entropy.
pub trait Trainable: Classifier + Clone {
    /// One gradient-descent step on the batch; returns its mean loss.
    fn sgd_step(&mut self, batch: &[(Vec<usize>, Label)], lr: f64) -> f64;
}

impl Trainable for AttentionClassifier {
    fn sgd_step(&mut self, batch: &[(Vec<usize>, Label)], lr: f64) -> f64 {
        let mut g = self.zero_grads();
        let loss = self.loss_and_grad(batch, &mut g);
        self.apply(&g, lr);
        loss
    }
}

impl Trainable for LinearTokenModel {
    fn sgd_step(&mut self, batch: &[(Vec<usize>, Label)], lr: f64) -> f64 {
        let (loss, de, dh, db) = self.loss_and_grad(batch);
        self.embedding -= de * lr;
        self.head -= dh * lr;
        self.bias -= db * lr;
        loss
    }
}

/// Metric of `model` over `examples`, evaluated in parallel.
pub fn evaluate<C: Classifier + ?Sized>(
    model: &C,
    examples: &[LabeledExample],
    metric: MetricKind,
    n_labels: usize,
) -> Result<f64> {
    let predicted =
        examples.par_iter().map(|ex| model.forward(&ex.sequence).map(|o| o.predicted())).collect::<Result<Vec<_>>>()?;
    let gold: Vec<Label> = examples.iter().map(|e| e.gold).collect();
    Ok(metric.evaluate(&predicted, &gold, n_labels))
}

const VALIDATION_STREAM: u64 = u64::MAX;

/// The validation set a training run selects epochs on.
pub fn validation_set(split: &DatasetSplit, mode: ValidationMode, seed: u64) -> Result<Vec<LabeledExample>> {
    let mut rng = child(seed, &[VALIDATION_STREAM]);
    match mode {
        ValidationMode::Plain => Ok(split.validation.clone()),
        ValidationMode::Masked => split
            .validation
            .iter()
            .map(|ex| {
                let r: f64 = rng.random();
                Ok(LabeledExample { sequence: mask_tokens(&ex.sequence, r, &mut rng)?, ..ex.clone() })
            })
            .collect(),
        ValidationMode::Dual => dual_validation(&split.validation, &mut rng),
    }
}

/// Mini-batch gradient descent returning the parameters of the epoch with the
/// best validation metric (earliest on ties).
pub fn train<M: Trainable>(init: M, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(M, TrainHistory)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyDataset("training split is empty"));
    }
    if split.validation.is_empty() {
        return Err(Error::EmptyDataset("validation split is empty"));
    }
    let val = validation_set(split, cfg.validation, cfg.seed)?;
    let mut model = init;
    let mut best: Option<(f64, M)> = None;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = child(cfg.seed, &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<LabeledExample> = chunk.iter().map(|&i| split.train[i].clone()).collect();
            let batch = match cfg.masking {
                MaskingMode::Plain => batch,
                MaskingMode::MaskedFineTuning => build_masked_minibatch(&batch, &mut rng)?,
                MaskingMode::OnlyMasking => batch
                    .iter()
                    .map(|ex| {
                        let r: f64 = rng.random();
                        Ok(LabeledExample { sequence: mask_tokens(&ex.sequence, r, &mut rng)?, ..ex.clone() })
                    })
                    .collect::<Result<_>>()?,
            };
            let pairs: Vec<(Vec<usize>, Label)> =
                batch.iter().map(|ex| (ex.sequence.effective_tokens(), ex.gold)).collect();
            if let Some(&bad) = pairs.iter().flat_map(|(t, _)| t).find(|&&t| t >= model.vocab_size()) {
                return Err(Error::Vocabulary { id: bad, vocab_size: model.vocab_size() });
            }
            let loss = model.sgd_step(&pairs, cfg.learning_rate);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss;
            batches += 1;
        }
        let metric = evaluate(&model, &val, split.metric, split.n_labels())?;
        history.epochs.push(EpochRecord { epoch, train_loss: total / batches as f64, validation_metric: metric });
        if best.as_ref().is_none_or(|(m, _)| metric > *m) {
            best = Some((metric, model.clone()));
            history.best_epoch = epoch;
        }
        log::debug!("epoch {epoch}: loss {:.4}, validation {metric:.4}", total / batches as f64);
    }
    let (_, model) = best.expect("at least one epoch");
    Ok((model, history))
}
