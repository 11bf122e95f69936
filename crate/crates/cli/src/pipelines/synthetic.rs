//! ROAR validation on the 16-feature tabular generator.

use super::{all_pass, log_checks, Check};
use crate::config::ExperimentConfig;
use crate::store::Store;
use anyhow::{ensure, Result};
use faithkit::data::gen_synthetic;
use faithkit::faith::{synthetic_roar, SyntheticRoar};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

pub const CURVES_CSV: &str = "synthetic_curves.csv";
pub const PLOT_JSON: &str = "synthetic_plot.json";
pub const REPORT_JSON: &str = "synthetic_report.json";

#[derive(Serialize)]
struct Row<'a> {
    curve: &'a str,
    features_removed: usize,
    accuracy: f64,
}

#[derive(Serialize)]
struct Plot<'a> {
    features_removed: Vec<usize>,
    curves: BTreeMap<&'a str, &'a [f64]>,
    orders: BTreeMap<&'a str, &'a [usize]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticReport {
    pub pipeline: String,
    pub experiment: String,
    pub checks: Vec<Check>,
    pub curves: Vec<(String, Vec<f64>)>,
}

fn curves(r: &SyntheticRoar) -> [(&'static str, &[f64]); 4] {
    [
        ("ground-truth", &r.ground_truth),
        ("worst-case", &r.worst_case),
        ("roar", &r.roar),
        ("recursive-roar", &r.recursive_roar),
    ]
}

pub fn checks(cfg: &ExperimentConfig, r: &SyntheticRoar) -> Vec<Check> {
    let tol = cfg.synthetic.tolerance;
    let gap = r.recursive_roar.iter().zip(&r.ground_truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let between = (0..r.roar.len()).all(|i| r.roar[i] >= r.ground_truth[i] - tol && r.roar[i] <= r.worst_case[i] + tol);
    let levels = cfg.synthetic.worst_case_levels.min(r.worst_case.len() - 1);
    let worst_loss = (0..=levels).map(|k| r.worst_case[0] - r.worst_case[k]).fold(0.0, f64::max);
    vec![
        Check::new("recursive ROAR tracks ground truth", gap <= tol, format!("max gap {gap:.4} (tolerance {tol})")),
        Check::new("one-shot ROAR between ground truth and worst case", between, format!("tolerance {tol}")),
        Check::new(
            "worst case keeps accuracy",
            worst_loss < tol,
            format!("max loss {worst_loss:.4} through {levels} features removed"),
        ),
    ]
}

pub fn run(cfg: &ExperimentConfig, store: &Store) -> Result<bool> {
    let s = &cfg.synthetic;
    ensure!(s.n_train > 0 && s.n_test > 0, "synthetic.n_train and synthetic.n_test must be positive");
    let start = Instant::now();
    let r: SyntheticRoar = store.stage("synthetic-roar", || {
        let data = gen_synthetic(s.n_train + s.n_test, cfg.seed)?;
        let (train, test) = data.split_at(s.n_train);
        Ok(synthetic_roar(train, test, s.l2)?)
    })?;
    let elapsed = start.elapsed().as_secs_f64();

    let rows: Vec<Row> = curves(&r)
        .iter()
        .flat_map(|(name, acc)| {
            acc.iter().enumerate().map(move |(k, &a)| Row { curve: name, features_removed: k, accuracy: a })
        })
        .collect();
    store.write_csv(CURVES_CSV, &rows)?;
    store.write_json(
        PLOT_JSON,
        &Plot {
            features_removed: (0..r.ground_truth.len()).collect(),
            curves: curves(&r).into_iter().collect(),
            orders: [
                ("ground-truth", r.ground_truth_order.as_slice()),
                ("roar", r.roar_order.as_slice()),
                ("recursive-roar", r.recursive_order.as_slice()),
            ]
            .into_iter()
            .collect(),
        },
    )?;
    let checks = checks(cfg, &r);
    store.write_json(
        REPORT_JSON,
        &SyntheticReport {
            pipeline: "synthetic-validate".into(),
            experiment: cfg.experiment.clone(),
            checks: checks.clone(),
            curves: curves(&r).iter().map(|(n, c)| (n.to_string(), c.to_vec())).collect(),
        },
    )?;
    // wall time stays out of the files so reruns are byte-identical
    let timing = Check::new(
        "runtime budget",
        elapsed <= s.time_budget_secs,
        format!("{elapsed:.2}s (budget {}s)", s.time_budget_secs),
    );
    log_checks(&checks);
    log_checks(std::slice::from_ref(&timing));
    Ok(all_pass(&checks) && timing.pass)
}
