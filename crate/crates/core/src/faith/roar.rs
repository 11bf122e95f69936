//! Remove-and-retrain: mask the most important inputs, retrain from scratch
//! and measure the retrained model, either ranking once (ROAR) or
//! re-explaining with the latest model at every level (recursive ROAR).

use super::recursive::{cumulative_count, step_count, ExplainTarget};
use super::{CurvePoint, FaithfulnessCurve};
use crate::data::{mask_top_k, DatasetSplit, LabeledExample, SyntheticTabularExample, FEATURE_DIM, INFORMATIVE};
use crate::explain::ImportanceMeasure;
use crate::model::{evaluate, fit_logreg_xy, Classifier, LinearModel};
use crate::rng::{child, derive_seed};
use crate::{Error, Result};
use rayon::prelude::*;

#[derive(Clone, Debug)]
pub struct RoarOptions {
    pub delta: f64,
    pub recursive: bool,
    pub seed: u64,
    pub target: ExplainTarget,
}

fn level_error(level: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Level { level, source: Box::new(e) }
}

fn explain_all<C: Classifier + ?Sized>(
    im: &ImportanceMeasure,
    model: &C,
    data: &[LabeledExample],
    target: ExplainTarget,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    data.par_iter()
        .enumerate()
        .map(|(idx, ex)| {
            let wrap = |e: Error| Error::Observation { id: ex.id, source: Box::new(e) };
            let class = match target {
                ExplainTarget::Gold => ex.gold,
                ExplainTarget::Predicted => model.forward(&ex.sequence).map_err(wrap)?.predicted(),
            };
            let mut rng = child(seed, &[idx as u64]);
            Ok(im.explain(model, &ex.sequence, class, &mut rng).map_err(wrap)?.scores)
        })
        .collect()
}

fn mask_split(data: &[LabeledExample], scores: &[Vec<f64>], level: usize, steps: usize) -> Result<Vec<LabeledExample>> {
    data.iter()
        .zip(scores)
        .map(|(ex, s)| {
            let goal = cumulative_count(level, steps, ex.sequence.len());
            let k = goal.saturating_sub(ex.sequence.masked_count());
            let seq = mask_top_k(&ex.sequence, s, k)?.sequence;
            Ok(LabeledExample { sequence: seq, ..ex.clone() })
        })
        .collect()
}

fn explain_split<C: Classifier + ?Sized>(
    im: &ImportanceMeasure,
    model: &C,
    split: &DatasetSplit,
    target: ExplainTarget,
    seed: u64,
) -> Result<[Vec<Vec<f64>>; 3]> {
    Ok([
        explain_all(im, model, &split.train, target, derive_seed(seed, &[0]))?,
        explain_all(im, model, &split.validation, target, derive_seed(seed, &[1]))?,
        explain_all(im, model, &split.test, target, derive_seed(seed, &[2]))?,
    ])
}

fn masked_split(base: &DatasetSplit, scores: &[Vec<Vec<f64>>; 3], level: usize, steps: usize) -> Result<DatasetSplit> {
    let mut out = base.clone();
    out.train = mask_split(&base.train, &scores[0], level, steps)?;
    out.validation = mask_split(&base.validation, &scores[1], level, steps)?;
    out.test = mask_split(&base.test, &scores[2], level, steps)?;
    Ok(out)
}

/// ROAR on token data. `trainer(split, seed)` must be deterministic.
pub fn roar_retrain<M, T>(
    im: &ImportanceMeasure,
    trainer: T,
    split: &DatasetSplit,
    opts: &RoarOptions,
) -> Result<FaithfulnessCurve>
where
    M: Classifier,
    T: Fn(&DatasetSplit, u64) -> Result<M> + Sync,
{
    let steps = step_count(opts.delta)?;
    let level_seed = |level: usize| derive_seed(opts.seed, &[level as u64]);
    let perf = |m: &M, s: &DatasetSplit| evaluate(m, &s.test, s.metric, s.n_labels());
    let model0 = trainer(split, level_seed(0)).map_err(level_error(0))?;
    let p0 = perf(&model0, split).map_err(level_error(0))?;

    let rest: Vec<f64> = if opts.recursive {
        let mut prev_model = model0;
        let mut prev_split = split.clone();
        let mut out = Vec::with_capacity(steps);
        for level in 1..=steps {
            let err = level_error(level);
            let scores = explain_split(im, &prev_model, &prev_split, opts.target, derive_seed(level_seed(level), &[7]))
                .map_err(&err)?;
            let next = masked_split(&prev_split, &scores, level, steps).map_err(&err)?;
            let model = trainer(&next, level_seed(level)).map_err(&err)?;
            out.push(perf(&model, &next).map_err(&err)?);
            prev_model = model;
            prev_split = next;
        }
        out
    } else {
        let scores = explain_split(im, &model0, split, opts.target, derive_seed(opts.seed, &[u64::MAX]))
            .map_err(level_error(0))?;
        (1..=steps)
            .into_par_iter()
            .map(|level| {
                let err = level_error(level);
                let next = masked_split(split, &scores, level, steps).map_err(&err)?;
                let model = trainer(&next, level_seed(level)).map_err(&err)?;
                perf(&model, &next).map_err(&err)
            })
            .collect::<Result<_>>()?
    };
    let points = std::iter::once(p0)
        .chain(rest)
        .enumerate()
        .map(|(i, performance)| CurvePoint { ratio: i as f64 / steps as f64, performance })
        .collect();
    let prefix = if opts.recursive { "recursive-roar" } else { "roar" };
    FaithfulnessCurve::new(format!("{prefix}-{}", im.name()), split.metric, points)
}

/// Accuracy curves of the synthetic tabular ROAR experiment, one entry per
/// number of removed features (0 through 16).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticRoar {
    pub ground_truth: Vec<f64>,
    pub worst_case: Vec<f64>,
    pub roar: Vec<f64>,
    pub recursive_roar: Vec<f64>,
    pub ground_truth_order: Vec<usize>,
    pub roar_order: Vec<usize>,
    pub recursive_order: Vec<usize>,
}

fn design(data: &[SyntheticTabularExample], removed: &[usize]) -> (Vec<Vec<f64>>, Vec<bool>) {
    let xs = data
        .iter()
        .map(|e| {
            let mut x = e.x.to_vec();
            for &j in removed {
                x[j] = 0.0;
            }
            x
        })
        .collect();
    (xs, data.iter().map(|e| e.y).collect())
}

fn fit_masked(train: &[SyntheticTabularExample], removed: &[usize], l2: f64) -> Result<LinearModel> {
    let (xs, ys) = design(train, removed);
    fit_logreg_xy(&xs, &ys, l2)
}

fn test_accuracy(model: &LinearModel, test: &[SyntheticTabularExample], removed: &[usize]) -> f64 {
    let (xs, ys) = design(test, removed);
    model.accuracy(&xs, &ys)
}

/// Retrains at every prefix of `order`, returning test accuracies for 0..=16 removed.
pub fn tabular_roar_fixed(
    train: &[SyntheticTabularExample],
    test: &[SyntheticTabularExample],
    order: &[usize],
    l2: f64,
) -> Result<Vec<f64>> {
    (0..=order.len())
        .into_par_iter()
        .map(|level| {
            let removed = &order[..level];
            let m = fit_masked(train, removed, l2).map_err(level_error(level))?;
            Ok(test_accuracy(&m, test, removed))
        })
        .collect()
}

fn rank_by_weight(model: &LinearModel, removed: &[usize]) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..FEATURE_DIM).filter(|j| !removed.contains(j)).collect();
    candidates.sort_by(|&a, &b| model.weights[b].abs().total_cmp(&model.weights[a].abs()).then(a.cmp(&b)));
    candidates
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

/// The informative features in the order that lowers accuracy the most
/// (smallest summed accuracy over their removal levels), then the rest.
pub fn ground_truth_order(
    train: &[SyntheticTabularExample],
    test: &[SyntheticTabularExample],
    l2: f64,
) -> Result<Vec<usize>> {
    let informative: Vec<usize> = (0..INFORMATIVE).collect();
    let mut cache = std::collections::HashMap::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for order in permutations(&informative) {
        let mut area = 0.0;
        for level in 1..=order.len() {
            let mut key = order[..level].to_vec();
            key.sort_unstable();
            let acc = match cache.get(&key) {
                Some(&a) => a,
                None => {
                    let m = fit_masked(train, &key, l2).map_err(level_error(level))?;
                    let a = test_accuracy(&m, test, &key);
                    cache.insert(key, a);
                    a
                }
            };
            area += acc;
        }
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            best = Some((area, order));
        }
    }
    let mut order = best.expect("nonempty permutations").1;
    order.extend(INFORMATIVE..FEATURE_DIM);
    Ok(order)
}

/// Ground truth, worst case, one-shot ROAR and recursive ROAR using
/// logistic-regression weight magnitudes as the importance measure.
pub fn synthetic_roar(
    train: &[SyntheticTabularExample],
    test: &[SyntheticTabularExample],
    l2: f64,
) -> Result<SyntheticRoar> {
    let ground = ground_truth_order(train, test, l2)?;
    let worst: Vec<usize> = (INFORMATIVE..FEATURE_DIM).chain(0..INFORMATIVE).collect();
    let base = fit_masked(train, &[], l2).map_err(level_error(0))?;
    let roar_order = rank_by_weight(&base, &[]);

    let mut recursive_order = Vec::with_capacity(FEATURE_DIM);
    let mut recursive_roar = vec![test_accuracy(&base, test, &[])];
    let mut model = base;
    for level in 1..=FEATURE_DIM {
        let next = rank_by_weight(&model, &recursive_order)[0];
        recursive_order.push(next);
        model = fit_masked(train, &recursive_order, l2).map_err(level_error(level))?;
        recursive_roar.push(test_accuracy(&model, test, &recursive_order));
    }
    Ok(SyntheticRoar {
        ground_truth: tabular_roar_fixed(train, test, &ground, l2)?,
        ground_truth_order: ground,
        worst_case: tabular_roar_fixed(train, test, &worst, l2)?,
        roar: tabular_roar_fixed(train, test, &roar_order, l2)?,
        recursive_roar,
        roar_order,
        recursive_order,
    })
}
