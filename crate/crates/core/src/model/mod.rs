//! Tiny differentiable token classifiers with exact gradients, plus a
//! tabular logistic-regression model for the synthetic task.

mod attention;
pub mod checkpoint;
mod linear;
mod train;

pub use attention::{AttentionClassifier, AttentionGrads};
pub use checkpoint::{Checkpoint, SavedModel};
pub use linear::{fit_logreg, fit_logreg_xy, LinearModel, LinearTokenModel};
pub use train::{
    evaluate, train, validation_set, EpochRecord, MaskingMode, TrainConfig, TrainHistory, Trainable, ValidationMode,
};

use crate::data::{Label, TokenSequence};
use crate::Result;
use nalgebra::DVector;

/// Per-token embedding vectors, the input space all gradients are taken in.
pub type Embedded = Vec<DVector<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Per-token attention weights; `None` for models without attention.
    pub attention: Option<Vec<f64>>,
    /// `embeddings[layer][token][unit]`.
    pub embeddings: Vec<Vec<Vec<f64>>>,
}

impl ModelOutput {
    pub fn predicted(&self) -> Label {
        argmax(&self.logits)
    }
}

/// Quantity whose input gradient is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTarget {
    Probability,
    Logit,
}

pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;
    fn embedding_dim(&self) -> usize;
    fn vocab_size(&self) -> usize;
    /// Number of exposed embedding layers.
    fn num_layers(&self) -> usize;

    /// The embedding row of `id`.
    fn embedding_row(&self, id: usize) -> DVector<f64>;

    fn mask_embedding(&self) -> DVector<f64> {
        self.embedding_row(crate::data::MASK_ID)
    }

    fn forward_embedded(&self, e: &[DVector<f64>]) -> ModelOutput;

    /// Gradient of `target` for `class` with respect to every token embedding.
    fn grad_embedded(&self, e: &[DVector<f64>], class: Label, target: GradTarget) -> Embedded;

    fn has_attention(&self) -> bool {
        false
    }

    fn embed(&self, seq: &TokenSequence) -> Result<Embedded> {
        seq.effective_tokens()
            .into_iter()
            .map(|id| {
                if id >= self.vocab_size() {
                    Err(crate::Error::Vocabulary { id, vocab_size: self.vocab_size() })
                } else {
                    Ok(self.embedding_row(id))
                }
            })
            .collect()
    }

    fn forward(&self, seq: &TokenSequence) -> Result<ModelOutput> {
        Ok(self.forward_embedded(&self.embed(seq)?))
    }

    /// Gradient of `p(class | seq)` with respect to each token's embedding.
    fn grad_input(&self, seq: &TokenSequence, class: Label) -> Result<Embedded> {
        self.check_class(class)?;
        Ok(self.grad_embedded(&self.embed(seq)?, class, GradTarget::Probability))
    }

    fn check_class(&self, class: Label) -> Result<()> {
        if class >= self.num_classes() {
            return Err(crate::Error::Range(format!("class {class} outside 0..{}", self.num_classes())));
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / total).collect()
}

/// Cross-entropy `-log softmax(logits)[gold]`, NaN-propagating.
pub(crate) fn cross_entropy(logits: &[f64], gold: Label) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[gold]
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `dT/dlogits` for the chosen target.
pub(crate) fn target_logit_grad(probs: &[f64], class: Label, target: GradTarget) -> Vec<f64> {
    match target {
        GradTarget::Logit => (0..probs.len()).map(|k| f64::from(u8::from(k == class))).collect(),
        GradTarget::Probability => {
            (0..probs.len()).map(|k| probs[class] * (f64::from(u8::from(k == class)) - probs[k])).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
