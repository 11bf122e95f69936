//! Markdown report assembled from the JSON reports in the output directory.

use super::fmm::FmmReport;
use super::masf::{CalibrateReport, ScoreReport};
use super::roar::RoarReport;
use super::selfcheck::SelfCheckReport;
use super::synthetic::SyntheticReport;
use super::{all_pass, fmm, log_checks, masf, roar, selfcheck, synthetic, Check};
use crate::config::ExperimentConfig;
use crate::store::{read_stamped, Provenance, Store};
use anyhow::Result;
use serde::de::DeserializeOwned;
use std::fmt::Write as _;

pub const REPORT_MD: &str = "report.md";

fn table(out: &mut String, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn f(x: f64) -> String {
    format!("{x:.4}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), f)
}

fn p(x: f64) -> String {
    format!("{x:.3e}")
}

fn checks_table(out: &mut String, checks: &[Check]) {
    table(
        out,
        &["check", "result", "detail"],
        checks.iter().map(|c| vec![c.name.clone(), (if c.pass { "pass" } else { "FAIL" }).into(), c.detail.clone()]),
    );
}

struct Loaded<T> {
    value: T,
    stale: Option<Check>,
}

fn load<T: DeserializeOwned>(store: &Store, name: &str) -> Result<Option<Loaded<T>>> {
    let path = store.path(name);
    if !path.exists() {
        return Ok(None);
    }
    let (prov, value): (Provenance, T) = read_stamped(&path)?;
    let stale = (prov != store.provenance).then(|| {
        Check::new(
            format!("{name} matches the current config"),
            false,
            format!("written under config {} seed {}", prov.config_sha256, prov.seed),
        )
    });
    Ok(Some(Loaded { value, stale }))
}

pub fn run(cfg: &ExperimentConfig, store: &Store) -> Result<bool> {
    let mut md = String::new();
    let mut checks: Vec<Check> = Vec::new();
    let mut sections = 0;
    let _ = writeln!(md, "\n# Report: {}\n", cfg.experiment);

    if let Some(r) = load::<SyntheticReport>(store, synthetic::REPORT_JSON)? {
        sections += 1;
        md.push_str("## Synthetic ROAR validation\n\n");
        checks_table(&mut md, &r.value.checks);
        let names: Vec<&str> = r.value.curves.iter().map(|(n, _)| n.as_str()).collect();
        let mut header = vec!["features removed"];
        header.extend(&names);
        let levels = r.value.curves.first().map_or(0, |c| c.1.len());
        table(
            &mut md,
            &header,
            (0..levels).map(|k| {
                let mut row = vec![k.to_string()];
                row.extend(r.value.curves.iter().map(|(_, c)| f(c[k])));
                row
            }),
        );
        checks.extend(r.value.checks.iter().cloned().chain(r.stale));
    }

    if let Some(r) = load::<FmmReport>(store, fmm::REPORT_JSON)? {
        sections += 1;
        let v = &r.value;
        md.push_str("## Masked fine-tuning\n\n### Accuracy\n\n");
        table(
            &mut md,
            &["replicate", "model", "unmasked", "100% masked", "class majority"],
            v.accuracy.iter().map(|a| {
                vec![a.replicate.to_string(), a.model.clone(), f(a.unmasked), f(a.fully_masked), f(a.majority)]
            }),
        );
        md.push_str("### Faithfulness (ACU / RACU against the random baseline)\n\n");
        table(
            &mut md,
            &["measure", "replicates", "ACU", "ACU CI", "RACU", "RACU CI"],
            v.summary.iter().map(|s| {
                vec![
                    s.measure.clone(),
                    s.replicates.to_string(),
                    f(s.acu_mean),
                    format!("[{}, {}]", f(s.acu_lo), f(s.acu_hi)),
                    opt(s.racu_mean),
                    format!("[{}, {}]", opt(s.racu_lo), opt(s.racu_hi)),
                ]
            }),
        );
        let _ = writeln!(md, "### In-distribution p-values (MaSF, OOD when p < {})\n", v.alpha);
        table(
            &mut md,
            &["replicate", "model", "measure", "masking ratio", "performance", "p-value", "OOD"],
            v.curves.iter().map(|c| {
                vec![
                    c.replicate.to_string(),
                    c.model.clone(),
                    c.measure.clone(),
                    format!("{:.2}", c.ratio),
                    f(c.performance),
                    p(c.masf_pvalue),
                    (if c.ood { "yes" } else { "no" }).into(),
                ]
            }),
        );
        md.push_str("### Checks\n\n");
        checks_table(&mut md, &v.checks);
        checks.extend(v.checks.iter().cloned().chain(r.stale));
    }

    if let Some(r) = load::<RoarReport>(store, roar::REPORT_JSON)? {
        sections += 1;
        md.push_str("## Remove and retrain\n\n");
        table(
            &mut md,
            &["variant/measure", "replicates", "ACU", "RACU"],
            r.value
                .summary
                .iter()
                .map(|s| vec![s.measure.clone(), s.replicates.to_string(), f(s.acu_mean), opt(s.racu_mean)]),
        );
        checks_table(&mut md, &r.value.checks);
        checks.extend(r.value.checks.iter().cloned().chain(r.stale));
    }

    if let Some(r) = load::<CalibrateReport>(store, masf::CALIBRATE_REPORT_JSON)? {
        sections += 1;
        let v = &r.value;
        let _ = writeln!(
            md,
            "## MaSF calibration\n\n{} observations, {} layers x {} units, model `{}`.\n",
            v.observations, v.layers, v.units, v.checkpoint
        );
        checks.extend(v.checks.iter().cloned().chain(r.stale));
    }

    if let Some(r) = load::<ScoreReport>(store, masf::REPORT_JSON)? {
        sections += 1;
        let _ = writeln!(md, "## MaSF scoring (OOD when p < {})\n", r.value.alpha);
        table(
            &mut md,
            &["masking ratio", "observations", "dataset p-value", "flagged fraction", "OOD"],
            r.value.levels.iter().map(|l| {
                vec![
                    format!("{:.2}", l.ratio),
                    l.observations.to_string(),
                    p(l.dataset_pvalue),
                    f(l.flagged_fraction),
                    (if l.ood { "yes" } else { "no" }).into(),
                ]
            }),
        );
        checks.extend(r.value.checks.iter().cloned().chain(r.stale));
    }

    if let Some(r) = load::<SelfCheckReport>(store, selfcheck::REPORT_JSON)? {
        sections += 1;
        let v = &r.value;
        md.push_str("## Self-consistency\n\n### Classification accuracy\n\n");
        table(
            &mut md,
            &["persona", "correct", "total", "accuracy"],
            v.accuracy
                .iter()
                .map(|a| vec![a.persona.clone(), a.correct.to_string(), a.total.to_string(), f(a.accuracy)]),
        );
        let mode = if v.strict_unknown { "strict" } else { "default" };
        let _ = writeln!(md, "### Faithfulness ({mode} mode; discarded records are outside the denominator)\n");
        table(
            &mut md,
            &["explanation", "variation", "faithful", "defined", "ratio", "discarded"],
            v.ratios.iter().map(|r| {
                vec![
                    r.kind.clone(),
                    r.variation.clone(),
                    r.faithful.to_string(),
                    r.defined.to_string(),
                    opt(r.ratio),
                    r.discarded.to_string(),
                ]
            }),
        );
        if !v.discards.is_empty() {
            table(
                &mut md,
                &["discard reason", "count"],
                v.discards.iter().map(|(k, n)| vec![k.clone(), n.to_string()]),
            );
        }
        checks.extend(v.checks.iter().cloned().chain(r.stale));
    }

    if sections == 0 {
        checks.push(Check::new("pipeline reports present", false, "no pipeline reports in the output directory"));
    }
    md.push_str("## Validation summary\n\n");
    checks_table(&mut md, &checks);
    let path = store.write_text(REPORT_MD, &md)?;
    print!("{md}");
    log::info!("wrote {}", path.display());
    log_checks(checks.iter().filter(|c| !c.pass).cloned().collect::<Vec<_>>().as_slice());
    Ok(all_pass(&checks))
}
