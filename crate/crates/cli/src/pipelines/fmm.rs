//! Masked fine-tuning, MaSF in-distribution p-values and recursive
//! faithfulness curves, summarized by ACU/RACU across seed replicates.

use super::{all_pass, classifier, limited, load_dataset, log_checks, train_model, Check, BOOT_STREAM, EVAL_STREAM};
use crate::config::ExperimentConfig;
use crate::store::Store;
use anyhow::Result;
use faithkit::data::{class_majority, DatasetSplit, LabeledExample};
use faithkit::explain::ImportanceMeasure;
use faithkit::faith::{bca_interval, compute_acu_racu, recursive_eval, FaithfulnessCurve, RecursiveEvalOptions};
use faithkit::model::{evaluate, validation_set, Classifier, MaskingMode, SavedModel, ValidationMode};
use faithkit::ood::{dataset_pvalue, masf_calibrate, masf_pvalues, LayerEmbeddings, MasfCalibration};
use faithkit::rng::{child, derive_seed};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const CURVES_CSV: &str = "fmm_curves.csv";
pub const SUMMARY_CSV: &str = "fmm_summary.csv";
pub const REPORT_JSON: &str = "fmm_report.json";

/// Tolerance on the unmasked-accuracy cost of masked fine-tuning.
const ACCURACY_COST: f64 = 0.02;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CurveStage {
    curve: FaithfulnessCurve,
    /// Dataset-level MaSF p-value at every masking level.
    pvalues: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub replicate: usize,
    pub replicate_seed: u64,
    pub model: String,
    pub measure: String,
    pub ratio: f64,
    pub performance: f64,
    pub masf_pvalue: f64,
    pub ood: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub replicate: usize,
    pub model: String,
    pub unmasked: f64,
    pub fully_masked: f64,
    pub majority: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub measure: String,
    pub replicates: usize,
    pub acu_mean: f64,
    pub acu_lo: f64,
    pub acu_hi: f64,
    pub racu_replicates: usize,
    pub racu_mean: Option<f64>,
    pub racu_lo: Option<f64>,
    pub racu_hi: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FmmReport {
    pub pipeline: String,
    pub experiment: String,
    pub alpha: f64,
    pub checks: Vec<Check>,
    pub accuracy: Vec<AccuracyRow>,
    pub summary: Vec<SummaryRow>,
    pub curves: Vec<CurveRow>,
}

pub fn kebab<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn embeddings(model: &dyn Classifier, data: &[LabeledExample]) -> Result<Vec<LayerEmbeddings>> {
    data.par_iter().map(|ex| Ok(model.forward(&ex.sequence)?.embeddings)).collect()
}

fn fully_masked(data: &[LabeledExample]) -> Vec<LabeledExample> {
    data.iter().map(|ex| LabeledExample { sequence: ex.sequence.fully_masked(), ..ex.clone() }).collect()
}

/// The measures to run, with the random baseline first.
pub fn measures_with_baseline(cfg: &ExperimentConfig) -> Vec<ImportanceMeasure> {
    let mut out = vec![ImportanceMeasure::Random];
    out.extend(cfg.measures.iter().filter(|m| **m != ImportanceMeasure::Random).cloned());
    out
}

struct Trained {
    label: String,
    masked_fine_tuned: bool,
    model: SavedModel,
    calibration: MasfCalibration,
}

fn train_and_calibrate(
    cfg: &ExperimentConfig,
    store: &Store,
    split: &DatasetSplit,
    (rep, seed): (usize, u64),
    (masking, validation): (MaskingMode, ValidationMode),
) -> Result<Trained> {
    let label = kebab(&masking);
    let model: SavedModel =
        store.stage(&format!("fmm-r{rep}-{label}-model"), || train_model(cfg, split, seed, masking, validation))?;
    let calibration: MasfCalibration = store.stage(&format!("fmm-r{rep}-{label}-masf"), || {
        // calibrate on the validation data the model was selected on
        let val = validation_set(split, validation, derive_seed(seed, &[EVAL_STREAM]))?;
        Ok(masf_calibrate(&embeddings(classifier(&model), &val)?)?)
    })?;
    Ok(Trained { label, masked_fine_tuned: masking != MaskingMode::Plain, model, calibration })
}

fn curve_stage(
    cfg: &ExperimentConfig,
    store: &Store,
    split: &DatasetSplit,
    trained: &Trained,
    (rep, seed): (usize, u64),
    (j, im): (usize, &ImportanceMeasure),
) -> Result<CurveStage> {
    store.stage(&format!("fmm-r{rep}-{}-{j}-{}", trained.label, im.name()), || {
        let model = classifier(&trained.model);
        let opts = RecursiveEvalOptions {
            delta: cfg.delta,
            seed: derive_seed(seed, &[EVAL_STREAM, j as u64]),
            target: cfg.fmm.target,
            metric: split.metric,
            n_labels: split.n_labels(),
            masked_fine_tuned: trained.masked_fine_tuned,
        };
        let eval = recursive_eval(im, model, limited(&split.test, cfg.fmm.eval_limit), &opts)?;
        let pvalues = eval
            .levels
            .iter()
            .map(|level| Ok(dataset_pvalue(&masf_pvalues(&trained.calibration, &embeddings(model, level)?)?)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(CurveStage { curve: eval.curve, pvalues })
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and BCa interval of per-replicate (ACU, RACU) scores.
pub fn summarize(
    cfg: &ExperimentConfig,
    measure: String,
    scores: &[(f64, Option<f64>)],
    stream: u64,
) -> Result<SummaryRow> {
    let mut rng = child(cfg.seed, &[BOOT_STREAM, stream]);
    let acus: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let racus: Vec<f64> = scores.iter().filter_map(|s| s.1).collect();
    let (acu_lo, acu_hi) = bca_interval(&acus, cfg.fmm.confidence, cfg.fmm.resamples, &mut rng)?;
    let racu_ci = if racus.is_empty() {
        None
    } else {
        Some(bca_interval(&racus, cfg.fmm.confidence, cfg.fmm.resamples, &mut rng)?)
    };
    Ok(SummaryRow {
        measure,
        replicates: acus.len(),
        acu_mean: mean(&acus),
        acu_lo,
        acu_hi,
        racu_replicates: racus.len(),
        racu_mean: (!racus.is_empty()).then(|| mean(&racus)),
        racu_lo: racu_ci.map(|c| c.0),
        racu_hi: racu_ci.map(|c| c.1),
    })
}

pub fn run(cfg: &ExperimentConfig, store: &Store) -> Result<bool> {
    let split = load_dataset(cfg)?;
    let (_, majority) = class_majority(&split)?;
    let measures = measures_with_baseline(cfg);
    let main_regime = (cfg.train.masking, cfg.train.validation);
    let ablation = cfg.fmm.ablation && cfg.train.masking != MaskingMode::Plain;
    let alpha = cfg.fmm.alpha;

    let mut rows = Vec::new();
    let mut accuracy = Vec::new();
    let mut checks = Vec::new();
    // per measure: (acu, racu) for every replicate
    let mut scores: Vec<Vec<(f64, Option<f64>)>> = vec![Vec::new(); measures.len()];

    for (rep, seed) in cfg.replicate_seeds().into_iter().enumerate() {
        let mut regimes = vec![main_regime];
        if ablation {
            regimes.push((MaskingMode::Plain, ValidationMode::Plain));
        }
        let mut unmasked = Vec::new();
        for (ri, &regime) in regimes.iter().enumerate() {
            let trained = train_and_calibrate(cfg, store, &split, (rep, seed), regime)?;
            let model = classifier(&trained.model);
            let test = limited(&split.test, cfg.fmm.eval_limit);
            let acc = |d: &[LabeledExample]| evaluate(model, d, split.metric, split.n_labels());
            let row = AccuracyRow {
                replicate: rep,
                model: trained.label.clone(),
                unmasked: acc(test)?,
                fully_masked: acc(&fully_masked(test))?,
                majority,
            };
            unmasked.push(row.unmasked);
            accuracy.push(row);

            // the ablation model only needs the random curve for its OOD profile
            let run_measures: Vec<(usize, &ImportanceMeasure)> =
                measures.iter().enumerate().take(if ri == 0 { measures.len() } else { 1 }).collect();
            let mut stages = Vec::new();
            for &(j, im) in &run_measures {
                let st = curve_stage(cfg, store, &split, &trained, (rep, seed), (j, im))?;
                for (p, &pv) in st.curve.points.iter().zip(&st.pvalues) {
                    rows.push(CurveRow {
                        replicate: rep,
                        replicate_seed: seed,
                        model: trained.label.clone(),
                        measure: im.name(),
                        ratio: p.ratio,
                        performance: p.performance,
                        masf_pvalue: pv,
                        ood: pv < alpha,
                    });
                }
                stages.push(st);
            }
            if ri == 0 {
                for (j, st) in stages.iter().enumerate() {
                    let s = compute_acu_racu(&st.curve, &stages[0].curve)?;
                    scores[j].push((s.acu, s.racu));
                }
            } else {
                let last = *stages[0].pvalues.last().expect("curve has levels");
                checks.push(Check::new(
                    format!("replicate {rep}: plain model flags fully masked input"),
                    last < alpha,
                    format!("MaSF p = {last:.3e} at ratio 1 (alpha {alpha})"),
                ));
            }
        }
        if ablation {
            checks.push(Check::new(
                format!("replicate {rep}: masked fine-tuning keeps unmasked accuracy"),
                unmasked[0] >= unmasked[1] - ACCURACY_COST,
                format!("{:.3} vs plain {:.3}", unmasked[0], unmasked[1]),
            ));
        }
    }
    let finite = rows.iter().all(|r| r.performance.is_finite() && r.masf_pvalue.is_finite());
    checks.push(Check::new("curves and p-values are finite", finite, format!("{} points", rows.len())));

    let summary = measures
        .iter()
        .enumerate()
        .map(|(j, im)| summarize(cfg, im.name(), &scores[j], j as u64))
        .collect::<Result<Vec<_>>>()?;

    store.write_csv(CURVES_CSV, &rows)?;
    store.write_csv(SUMMARY_CSV, &summary)?;
    store.write_json(
        REPORT_JSON,
        &FmmReport {
            pipeline: "fmm-run".into(),
            experiment: cfg.experiment.clone(),
            alpha,
            checks: checks.clone(),
            accuracy,
            summary,
            curves: rows,
        },
    )?;
    log_checks(&checks);
    Ok(all_pass(&checks))
}
