//! Remove-and-retrain curves, one-shot and recursive, per importance measure.

use super::fmm::{measures_with_baseline, summarize, SummaryRow};
use super::{all_pass, load_dataset, log_checks, Check, EVAL_STREAM, INIT_STREAM, TRAIN_STREAM};
use crate::config::{ExperimentConfig, ModelKind};
use crate::store::Store;
use anyhow::{bail, Result};
use faithkit::data::DatasetSplit;
use faithkit::explain::ImportanceMeasure;
use faithkit::faith::{compute_acu_racu, roar_retrain, FaithfulnessCurve, RoarOptions};
use faithkit::model::{train, AttentionClassifier, LinearTokenModel, TrainConfig, Trainable};
use faithkit::rng::{derive_seed, seeded, Rng};
use serde::{Deserialize, Serialize};

pub const CURVES_CSV: &str = "roar_curves.csv";
pub const SUMMARY_CSV: &str = "roar_summary.csv";
pub const REPORT_JSON: &str = "roar_report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoarRow {
    pub replicate: usize,
    pub replicate_seed: u64,
    pub variant: String,
    pub measure: String,
    pub ratio: f64,
    pub performance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoarReport {
    pub pipeline: String,
    pub experiment: String,
    pub checks: Vec<Check>,
    pub summary: Vec<SummaryRow>,
    pub curves: Vec<RoarRow>,
}

type Init<M> = fn(usize, usize, usize, &mut Rng) -> M;

fn retrain<M: Trainable>(
    cfg: &ExperimentConfig,
    init: Init<M>,
    im: &ImportanceMeasure,
    split: &DatasetSplit,
    opts: &RoarOptions,
) -> Result<FaithfulnessCurve> {
    let trainer = |s: &DatasetSplit, seed: u64| {
        let t = &cfg.train;
        let tc = TrainConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: derive_seed(seed, &[TRAIN_STREAM]),
            masking: t.masking,
            validation: t.validation,
        };
        let model = init(s.vocab.len(), cfg.model.dim, s.n_labels(), &mut seeded(derive_seed(seed, &[INIT_STREAM])));
        train(model, s, &tc).map(|(m, _)| m)
    };
    Ok(roar_retrain(im, trainer, split, opts)?)
}

pub fn run(cfg: &ExperimentConfig, store: &Store) -> Result<bool> {
    let split = load_dataset(cfg)?;
    let measures = measures_with_baseline(cfg);
    let variants: Vec<(&str, bool)> = [("roar", false), ("recursive-roar", true)]
        .into_iter()
        .filter(|(_, rec)| if *rec { cfg.roar.recursive } else { cfg.roar.one_shot })
        .collect();
    if variants.is_empty() {
        bail!("roar.one_shot and roar.recursive are both disabled");
    }

    let mut rows = Vec::new();
    let mut scores: Vec<Vec<(f64, Option<f64>)>> = vec![Vec::new(); variants.len() * measures.len()];
    for (rep, seed) in cfg.replicate_seeds().into_iter().enumerate() {
        for (vi, &(variant, recursive)) in variants.iter().enumerate() {
            let mut curves = Vec::new();
            for (j, im) in measures.iter().enumerate() {
                let curve: FaithfulnessCurve =
                    store.stage(&format!("roar-r{rep}-{variant}-{j}-{}", im.name()), || {
                        let opts = RoarOptions {
                            delta: cfg.delta,
                            recursive,
                            seed: derive_seed(seed, &[EVAL_STREAM, j as u64]),
                            target: cfg.roar.target,
                        };
                        match cfg.model.kind {
                            ModelKind::Attention => {
                                retrain(cfg, AttentionClassifier::new_random::<Rng>, im, &split, &opts)
                            }
                            ModelKind::LinearToken => {
                                retrain(cfg, LinearTokenModel::new_random::<Rng>, im, &split, &opts)
                            }
                        }
                    })?;
                rows.extend(curve.points.iter().map(|p| RoarRow {
                    replicate: rep,
                    replicate_seed: seed,
                    variant: variant.into(),
                    measure: im.name(),
                    ratio: p.ratio,
                    performance: p.performance,
                }));
                curves.push(curve);
            }
            for (j, c) in curves.iter().enumerate() {
                let s = compute_acu_racu(c, &curves[0])?;
                scores[vi * measures.len() + j].push((s.acu, s.racu));
            }
        }
    }
    let mut summary = Vec::new();
    for (vi, (variant, _)) in variants.iter().enumerate() {
        for (j, im) in measures.iter().enumerate() {
            let k = vi * measures.len() + j;
            summary.push(summarize(cfg, format!("{variant}/{}", im.name()), &scores[k], 1000 + k as u64)?);
        }
    }
    let finite = rows.iter().all(|r| r.performance.is_finite());
    let checks = vec![Check::new("curves are finite", finite, format!("{} points", rows.len()))];

    store.write_csv(CURVES_CSV, &rows)?;
    store.write_csv(SUMMARY_CSV, &summary)?;
    store.write_json(
        REPORT_JSON,
        &RoarReport {
            pipeline: "roar-run".into(),
            experiment: cfg.experiment.clone(),
            checks: checks.clone(),
            summary,
            curves: rows,
        },
    )?;
    log_checks(&checks);
    Ok(all_pass(&checks))
}
