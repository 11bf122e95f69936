//! Stand-alone MaSF calibration and scoring against a saved model.

use super::{all_pass, classifier, load_dataset, log_checks, split_of, Check, EVAL_STREAM};
use crate::config::ExperimentConfig;
use crate::store::{read_stage_or_raw, read_stamped, Store};
use anyhow::{bail, Context, Result};
use faithkit::data::{mask_tokens, LabeledExample};
use faithkit::model::{Checkpoint, Classifier, SavedModel};
use faithkit::ood::{dataset_pvalue, masf_calibrate, masf_pvalues, LayerEmbeddings, MasfCalibration, MIN_CALIBRATION};
use faithkit::rng::child;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CALIBRATION_JSON: &str = "masf_calibration.json";
pub const CALIBRATE_REPORT_JSON: &str = "masf_calibrate_report.json";
pub const SCORES_CSV: &str = "masf_scores.csv";
pub const SUMMARY_CSV: &str = "masf_summary.csv";
pub const REPORT_JSON: &str = "masf_report.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrateReport {
    pub pipeline: String,
    pub experiment: String,
    pub checkpoint: String,
    pub observations: usize,
    pub layers: usize,
    pub units: usize,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub ratio: f64,
    pub id: usize,
    pub pvalue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub ratio: f64,
    pub observations: usize,
    pub dataset_pvalue: f64,
    pub flagged_fraction: f64,
    pub ood: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreReport {
    pub pipeline: String,
    pub experiment: String,
    pub alpha: f64,
    pub checks: Vec<Check>,
    pub levels: Vec<LevelRow>,
}

/// Loads a model from a checkpoint file or a persisted training stage.
pub fn load_model(path: &Path) -> Result<SavedModel> {
    match Checkpoint::load(path) {
        Ok(ck) => Ok(ck.model),
        Err(_) => read_stage_or_raw(path)
            .with_context(|| format!("{} is neither a checkpoint nor a model stage", path.display())),
    }
}

fn checkpoint_path(cfg: &ExperimentConfig) -> Result<PathBuf> {
    match &cfg.masf.checkpoint {
        Some(p) => Ok(cfg.resolve(p)),
        None => bail!("masf.checkpoint is required"),
    }
}

fn embeddings(model: &dyn Classifier, data: &[LabeledExample]) -> Result<Vec<LayerEmbeddings>> {
    data.par_iter().map(|ex| Ok(model.forward(&ex.sequence)?.embeddings)).collect()
}

fn model_and_data(cfg: &ExperimentConfig) -> Result<(SavedModel, faithkit::data::DatasetSplit)> {
    let path = checkpoint_path(cfg)?;
    let model = load_model(&path)?;
    let split = load_dataset(cfg)?;
    let vocab = classifier(&model).vocab_size();
    if vocab != split.vocab.len() {
        bail!("model vocabulary has {vocab} tokens but the dataset has {}", split.vocab.len());
    }
    Ok((model, split))
}

pub fn calibrate(cfg: &ExperimentConfig, store: &Store) -> Result<bool> {
    let (model, split) = model_and_data(cfg)?;
    let data = split_of(&split, cfg.masf.calibration_split);
    let cal = masf_calibrate(&embeddings(classifier(&model), data)?)?;
    store.write_json(CALIBRATION_JSON, &cal)?;
    let checks = vec![Check::new(
        "calibration set size",
        data.len() >= MIN_CALIBRATION,
        format!("{} observations (minimum {MIN_CALIBRATION})", data.len()),
    )];
    store.write_json(
        CALIBRATE_REPORT_JSON,
        &CalibrateReport {
            pipeline: "masf-calibrate".into(),
            experiment: cfg.experiment.clone(),
            checkpoint: checkpoint_path(cfg)?.display().to_string(),
            observations: data.len(),
            layers: cal.layers,
            units: cal.units,
            checks: checks.clone(),
        },
    )?;
    log_checks(&checks);
    Ok(all_pass(&checks))
}

fn load_calibration(cfg: &ExperimentConfig, store: &Store) -> Result<MasfCalibration> {
    let path = cfg.masf.calibration.as_ref().map(|p| cfg.resolve(p)).unwrap_or_else(|| store.path(CALIBRATION_JSON));
    match read_stamped::<MasfCalibration>(&path) {
        Ok((prov, cal)) => {
            if prov != store.provenance {
                log::warn!("{} was calibrated under config {}", path.display(), prov.config_sha256);
            }
            Ok(cal)
        }
        Err(_) => MasfCalibration::load(&path).with_context(|| format!("cannot load calibration {}", path.display())),
    }
}

pub fn score(cfg: &ExperimentConfig, store: &Store) -> Result<bool> {
    let cal = load_calibration(cfg, store)?;
    let (model, split) = model_and_data(cfg)?;
    let model = classifier(&model);
    let data = split_of(&split, cfg.masf.score_split);
    let alpha = cfg.masf.alpha;
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for (i, &ratio) in cfg.masf.mask_ratios.iter().enumerate() {
        let masked = data
            .par_iter()
            .enumerate()
            .map(|(idx, ex)| {
                let mut rng = child(cfg.seed, &[EVAL_STREAM, i as u64, idx as u64]);
                Ok(LabeledExample { sequence: mask_tokens(&ex.sequence, ratio, &mut rng)?, ..ex.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        let ps = masf_pvalues(&cal, &embeddings(model, &masked)?)?;
        let p = dataset_pvalue(&ps)?;
        levels.push(LevelRow {
            ratio,
            observations: ps.len(),
            dataset_pvalue: p,
            flagged_fraction: ps.iter().filter(|&&q| q < alpha).count() as f64 / ps.len() as f64,
            ood: p < alpha,
        });
        rows.extend(masked.iter().zip(&ps).map(|(ex, &pvalue)| ScoreRow { ratio, id: ex.id, pvalue }));
    }
    let valid = rows.iter().all(|r| (0.0..=1.0).contains(&r.pvalue));
    let checks = vec![Check::new("p-values lie in [0, 1]", valid, format!("{} scores", rows.len()))];
    store.write_csv(SCORES_CSV, &rows)?;
    store.write_csv(SUMMARY_CSV, &levels)?;
    store.write_json(
        REPORT_JSON,
        &ScoreReport {
            pipeline: "masf-score".into(),
            experiment: cfg.experiment.clone(),
            alpha,
            checks: checks.clone(),
            levels,
        },
    )?;
    log_checks(&checks);
    Ok(all_pass(&checks))
}
