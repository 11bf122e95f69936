//! Named experiment pipelines.

pub mod fmm;
pub mod masf;
pub mod report;
pub mod roar;
pub mod selfcheck;
pub mod synthetic;

use crate::config::{DatasetSection, ExperimentConfig, ModelKind, SplitName};
use anyhow::{Context, Result};
use faithkit::data::{io, DatasetSplit, LabeledExample};
use faithkit::model::{
    train, AttentionClassifier, Classifier, LinearTokenModel, MaskingMode, SavedModel, TrainConfig, ValidationMode,
};
use faithkit::rng::{derive_seed, seeded};
use serde::{Deserialize, Serialize};

/// Seed-stream identifiers under a replicate seed.
pub const DATA_STREAM: u64 = 1;
pub const INIT_STREAM: u64 = 2;
pub const TRAIN_STREAM: u64 = 3;
pub const EVAL_STREAM: u64 = 4;
pub const BOOT_STREAM: u64 = 5;

/// One internal validation and whether it held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, detail: detail.into() }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

pub fn log_checks(checks: &[Check]) {
    for c in checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        println!("{verdict}  {}: {}", c.name, c.detail);
    }
}

/// The dataset named by the config; generated data uses the root seed.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    match &cfg.dataset {
        DatasetSection::Keyword { n, seq_len } => {
            Ok(faithkit::data::gen_keyword_sentiment(*n, *seq_len, derive_seed(cfg.seed, &[DATA_STREAM]))?)
        }
        DatasetSection::File { path } => {
            let path = cfg.resolve(path);
            let file = std::fs::File::open(&path).with_context(|| format!("cannot open dataset {}", path.display()))?;
            Ok(io::read_dataset(std::io::BufReader::new(file))?)
        }
    }
}

pub fn split_of(split: &DatasetSplit, name: SplitName) -> &[LabeledExample] {
    match name {
        SplitName::Train => &split.train,
        SplitName::Validation => &split.validation,
        SplitName::Test => &split.test,
    }
}

/// Trains the configured architecture with the given masking regime.
pub fn train_model(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    replicate_seed: u64,
    masking: MaskingMode,
    validation: ValidationMode,
) -> Result<SavedModel> {
    let t = &cfg.train;
    let train_cfg = TrainConfig {
        learning_rate: t.learning_rate,
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed: derive_seed(replicate_seed, &[TRAIN_STREAM]),
        masking,
        validation,
    };
    let mut rng = seeded(derive_seed(replicate_seed, &[INIT_STREAM]));
    let (vocab, dim, classes) = (split.vocab.len(), cfg.model.dim, split.n_labels());
    Ok(match cfg.model.kind {
        ModelKind::Attention => SavedModel::Attention(
            train(AttentionClassifier::new_random(vocab, dim, classes, &mut rng), split, &train_cfg)?.0,
        ),
        ModelKind::LinearToken => SavedModel::LinearToken(
            train(LinearTokenModel::new_random(vocab, dim, classes, &mut rng), split, &train_cfg)?.0,
        ),
    })
}

pub fn classifier(model: &SavedModel) -> &dyn Classifier {
    match model {
        SavedModel::Attention(m) => m,
        SavedModel::LinearToken(m) => m,
    }
}

/// First `limit` observations, or all of them.
pub fn limited(data: &[LabeledExample], limit: Option<usize>) -> &[LabeledExample] {
    &data[..limit.map_or(data.len(), |l| l.min(data.len()))]
}
