//! Self-consistency evaluation of a chat model against a mock or HTTP backend.

use super::{all_pass, log_checks, Check};
use crate::config::{BackendSection, ExperimentConfig};
use crate::store::{Provenance, Store};
use anyhow::{bail, Context, Result};
use faithkit::selfcheck::{
    classification_accuracy, evaluate_self_consistency, faithfulness_ratio, ratios_by_variation, read_records,
    ChatBackend, HttpBackend, MockBackend, RecordWriter, SelfCheckExample, SelfCheckOptions, SelfConsistencyRecord,
    Variation,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};

pub const RECORDS_JSONL: &str = "selfcheck_records.jsonl";
pub const ACCURACY_CSV: &str = "selfcheck_accuracy.csv";
pub const RATIOS_CSV: &str = "selfcheck_ratios.csv";
pub const REPORT_JSON: &str = "selfcheck_report.json";

#[derive(Serialize, Deserialize)]
struct StoredRecord {
    #[serde(flatten)]
    provenance: Provenance,
    record: SelfConsistencyRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub persona: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub kind: String,
    /// `persona/axis`, or `all` for the per-kind total.
    pub variation: String,
    pub faithful: usize,
    pub defined: usize,
    pub discarded: usize,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelfCheckReport {
    pub pipeline: String,
    pub experiment: String,
    pub strict_unknown: bool,
    pub records: usize,
    pub errors: usize,
    pub checks: Vec<Check>,
    pub accuracy: Vec<AccuracyRow>,
    pub ratios: Vec<RatioRow>,
    pub discards: BTreeMap<String, usize>,
}

fn kebab<T: Serialize>(v: &T) -> String {
    super::fmm::kebab(v)
}

pub fn backend(cfg: &ExperimentConfig) -> Result<Box<dyn ChatBackend>> {
    match &cfg.selfcheck.backend {
        Some(BackendSection::Mock { script }) => {
            let path = cfg.resolve(script);
            Ok(Box::new(
                MockBackend::from_json_file(&path)
                    .with_context(|| format!("cannot load mock script {}", path.display()))?,
            ))
        }
        Some(BackendSection::Http { url, attempts }) => {
            let mut b = HttpBackend::new(url.clone(), cfg.selfcheck.generation.clone());
            b.attempts = *attempts;
            Ok(Box::new(b))
        }
        None => bail!("selfcheck.backend is required"),
    }
}

fn load_existing(store: &Store) -> Result<Vec<SelfConsistencyRecord>> {
    let path = store.path(RECORDS_JSONL);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let stored: Vec<StoredRecord> = read_records(&path).with_context(|| format!("cannot read {}", path.display()))?;
    if stored.iter().any(|s| s.provenance != store.provenance) {
        log::warn!("{} holds records from another config; starting over", path.display());
        std::fs::remove_file(&path)?;
        return Ok(Vec::new());
    }
    Ok(stored.into_iter().map(|s| s.record).collect())
}

pub fn run(cfg: &ExperimentConfig, store: &Store, workers: usize) -> Result<bool> {
    let sc = &cfg.selfcheck;
    let examples_path = sc.examples.as_ref().map(|p| cfg.resolve(p)).context("selfcheck.examples is required")?;
    let examples: Vec<SelfCheckExample> =
        read_records(&examples_path).with_context(|| format!("cannot read examples {}", examples_path.display()))?;
    let variations: Vec<Variation> = sc.kinds.iter().flat_map(|&k| Variation::all(k)).collect();
    let backend = backend(cfg)?;
    let options = SelfCheckOptions { strict_unknown: sc.strict_unknown };

    let mut records = load_existing(store)?;
    let done: HashSet<(String, Variation)> = records.iter().map(|r| (r.id.clone(), r.variation)).collect();
    let pending: Vec<(&SelfCheckExample, Variation)> = examples
        .iter()
        .flat_map(|e| variations.iter().map(move |&v| (e, v)))
        .filter(|(e, v)| !done.contains(&(e.id.clone(), *v)))
        .collect();
    if !records.is_empty() {
        log::info!("resuming: {} records present, {} pending", records.len(), pending.len());
    }

    let writer = RecordWriter::append_to(&store.path(RECORDS_JSONL))?;
    let errors = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let fresh: Vec<SelfConsistencyRecord> = pool.install(|| {
        pending
            .par_iter()
            .filter_map(|(e, v)| match evaluate_self_consistency(backend.as_ref(), e, *v, options) {
                Ok(record) => {
                    let stored = StoredRecord { provenance: store.provenance.clone(), record };
                    if let Err(err) = writer.write(&stored) {
                        log::error!("cannot persist record {} {}: {err}", e.id, v.label());
                    }
                    Some(stored.record)
                }
                Err(err) => {
                    // failed evaluations are not stored, so a rerun retries them
                    log::error!("{} {:?} {}: {err}", e.id, v.kind, v.label());
                    errors.fetch_add(1, Ordering::Relaxed);
                    None
                }
            })
            .collect()
    });
    records.extend(fresh);
    let order: BTreeMap<&str, usize> = examples.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    records.retain(|r| order.contains_key(r.id.as_str()) && variations.contains(&r.variation));
    records.sort_by_key(|r| (order[r.id.as_str()], r.variation));
    let errors = errors.into_inner();

    let accuracy: Vec<AccuracyRow> = classification_accuracy(&records)
        .into_iter()
        .map(|(p, (correct, total))| AccuracyRow {
            persona: kebab(&p),
            correct,
            total,
            accuracy: correct as f64 / total.max(1) as f64,
        })
        .collect();
    let by_variation = ratios_by_variation(&records);
    let mut ratios = Vec::new();
    for &kind in &sc.kinds {
        for v in Variation::all(kind) {
            let r = by_variation.get(&v).copied().unwrap_or_default();
            ratios.push(RatioRow {
                kind: kebab(&kind),
                variation: v.label(),
                faithful: r.faithful,
                defined: r.defined,
                discarded: r.discarded,
                ratio: r.ratio,
            });
        }
        let total = faithfulness_ratio(records.iter().filter(|r| r.variation.kind == kind));
        ratios.push(RatioRow {
            kind: kebab(&kind),
            variation: "all".into(),
            faithful: total.faithful,
            defined: total.defined,
            discarded: total.discarded,
            ratio: total.ratio,
        });
    }
    let mut discards = BTreeMap::new();
    for d in records.iter().filter_map(|r| r.discard) {
        *discards.entry(kebab(&d)).or_insert(0) += 1;
    }
    let expected = examples.len() * variations.len();
    let checks = vec![Check::new(
        "every evaluation completed",
        errors == 0 && records.len() == expected,
        format!("{} of {expected} records, {errors} failed", records.len()),
    )];

    store.write_csv(ACCURACY_CSV, &accuracy)?;
    store.write_csv(RATIOS_CSV, &ratios)?;
    store.write_json(
        REPORT_JSON,
        &SelfCheckReport {
            pipeline: "selfcheck-run".into(),
            experiment: cfg.experiment.clone(),
            strict_unknown: sc.strict_unknown,
            records: records.len(),
            errors,
            checks: checks.clone(),
            accuracy,
            ratios,
            discards,
        },
    )?;
    log_checks(&checks);
    Ok(all_pass(&checks))
}
