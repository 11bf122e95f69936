//! Datasets, token sequences and the masking transforms used for masked
//! fine-tuning and faithfulness evaluation.

mod baseline;
pub mod io;
mod keyword;
mod masking;
mod synthetic;

pub use baseline::class_majority;
pub use keyword::{gen_keyword_sentiment, KeywordConfig};
pub use masking::{
    build_masked_minibatch, build_masked_minibatch_with, dual_validation, dual_validation_with, mask_tokens,
    mask_top_k, TopKMasking,
};
pub use synthetic::{gen_synthetic, SyntheticGenerator, SyntheticTabularExample, FEATURE_DIM, INFORMATIVE};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub type TokenId = usize;
pub type Label = usize;

/// Reserved mask token; always id 0 in every vocabulary.
pub const MASK_TOKEN: &str = "[MASK]";
pub const MASK_ID: TokenId = 0;

/// String-keyed vocabulary with the mask token at id 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary { tokens: vec![MASK_TOKEN.to_string()], index: HashMap::new() };
        vocab.index.insert(MASK_TOKEN.to_string(), MASK_ID);
        for t in tokens {
            vocab.insert(t.into());
        }
        vocab
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn insert(&mut self, token: String) -> TokenId {
        if let Some(&id) = self.index.get(&token) {
            return id;
        }
        let id = self.tokens.len();
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        // the mask token is always present
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuilds the lookup index after deserialization.
    pub(crate) fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn from_tokens(tokens: Vec<String>) -> crate::Result<Self> {
        if tokens.first().map(String::as_str) != Some(MASK_TOKEN) {
            return Err(crate::Error::Format(format!("vocabulary must start with {MASK_TOKEN}")));
        }
        let mut v = Vocabulary { tokens, index: HashMap::new() };
        v.reindex();
        if v.index.len() != v.tokens.len() {
            return Err(crate::Error::Format("duplicate vocabulary entries".into()));
        }
        Ok(v)
    }
}

/// A token sequence with per-position mask flags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    masked: Vec<bool>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        let masked = vec![false; tokens.len()];
        TokenSequence { tokens, masked }
    }

    pub fn with_mask(tokens: Vec<TokenId>, masked: Vec<bool>) -> crate::Result<Self> {
        if tokens.len() != masked.len() {
            return Err(crate::Error::Dimension(format!("{} tokens but {} mask flags", tokens.len(), masked.len())));
        }
        Ok(TokenSequence { tokens, masked })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn mask_flags(&self) -> &[bool] {
        &self.masked
    }

    pub fn is_masked(&self, pos: usize) -> bool {
        self.masked[pos]
    }

    pub fn mask(&mut self, pos: usize) {
        self.masked[pos] = true;
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn unmasked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.masked.iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i)
    }

    /// The token the model sees at `pos`: the mask token when masked.
    pub fn effective_token(&self, pos: usize) -> TokenId {
        if self.masked[pos] {
            MASK_ID
        } else {
            self.tokens[pos]
        }
    }

    pub fn effective_tokens(&self) -> Vec<TokenId> {
        (0..self.len()).map(|i| self.effective_token(i)).collect()
    }

    pub fn fully_masked(&self) -> Self {
        TokenSequence { tokens: self.tokens.clone(), masked: vec![true; self.tokens.len()] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: usize,
    pub sequence: TokenSequence,
    pub gold: Label,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    #[default]
    Accuracy,
    MacroF1,
}

impl MetricKind {
    pub fn evaluate(self, predicted: &[Label], gold: &[Label], n_labels: usize) -> f64 {
        match self {
            MetricKind::Accuracy => accuracy(predicted, gold),
            MetricKind::MacroF1 => macro_f1(predicted, gold, n_labels),
        }
    }
}

pub fn accuracy(predicted: &[Label], gold: &[Label]) -> f64 {
    assert_eq!(predicted.len(), gold.len());
    if gold.is_empty() {
        return f64::NAN;
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    hits as f64 / gold.len() as f64
}

/// Unweighted mean of per-class F1; a class with no predictions and no
/// gold occurrences contributes 0.
pub fn macro_f1(predicted: &[Label], gold: &[Label], n_labels: usize) -> f64 {
    assert_eq!(predicted.len(), gold.len());
    if n_labels == 0 {
        return f64::NAN;
    }
    let mut total = 0.0;
    for c in 0..n_labels {
        let tp = predicted.iter().zip(gold).filter(|(&p, &g)| p == c && g == c).count() as f64;
        let fp = predicted.iter().zip(gold).filter(|(&p, &g)| p == c && g != c).count() as f64;
        let fn_ = predicted.iter().zip(gold).filter(|(&p, &g)| p != c && g == c).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        if denom > 0.0 {
            total += 2.0 * tp / denom;
        }
    }
    total / n_labels as f64
}

/// Train/validation/test splits over a shared vocabulary and label set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub labels: Vec<String>,
    pub metric: MetricKind,
    pub vocab: Vocabulary,
    pub seed: u64,
    /// Tokens that carry the label by construction (empty when unknown).
    #[serde(default)]
    pub signal_tokens: Vec<TokenId>,
}

impl DatasetSplit {
    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    /// Applies `f` to every example of every split.
    pub fn map_examples<F>(&self, mut f: F) -> DatasetSplit
    where
        F: FnMut(&LabeledExample) -> LabeledExample,
    {
        DatasetSplit {
            train: self.train.iter().map(&mut f).collect(),
            validation: self.validation.iter().map(&mut f).collect(),
            test: self.test.iter().map(&mut f).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> DatasetSplit {
        DatasetSplit {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            labels: self.labels.clone(),
            metric: self.metric,
            vocab: self.vocab.clone(),
            seed: self.seed,
            signal_tokens: self.signal_tokens.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_reserves_mask() {
        let v = Vocabulary::new(["a", "b", "a"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id(MASK_TOKEN), Some(MASK_ID));
        assert_eq!(v.token(2), Some("b"));
    }

    #[test]
    fn masked_positions_render_as_mask_token() {
        let mut s = TokenSequence::new(vec![3, 4, 5]);
        s.mask(1);
        assert_eq!(s.effective_tokens(), vec![3, MASK_ID, 5]);
        assert_eq!(s.mask_flags().len(), s.len());
    }

    #[test]
    fn mismatched_mask_rejected() {
        assert!(TokenSequence::with_mask(vec![1, 2], vec![true]).is_err());
    }

    #[test]
    fn macro_f1_of_constant_predictor() {
        // predicting class 0 on [0,0,1,1]: F1_0 = 2*2/(4+2) = 2/3, F1_1 = 0
        let f1 = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2);
        assert!((f1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1]), 0.5);
    }
}
