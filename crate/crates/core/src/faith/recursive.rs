use super::{CurvePoint, FaithfulnessCurve};
use crate::data::{mask_top_k, Label, LabeledExample, MetricKind};
use crate::explain::ImportanceMeasure;
use crate::model::Classifier;
use crate::rng::child;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which class an explanation is computed for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainTarget {
    /// The gold label; can leak the label into the masking pattern.
    #[default]
    Gold,
    Predicted,
}

#[derive(Clone, Debug)]
pub struct RecursiveEvalOptions {
    pub delta: f64,
    pub seed: u64,
    pub target: ExplainTarget,
    pub metric: MetricKind,
    pub n_labels: usize,
    /// Whether the model was trained with masked fine-tuning; masking is
    /// only in-distribution for such models.
    pub masked_fine_tuned: bool,
}

#[derive(Clone, Debug)]
pub struct RecursiveEval {
    pub curve: FaithfulnessCurve,
    /// The masked dataset at every ratio, starting with the unmasked input.
    pub levels: Vec<Vec<LabeledExample>>,
}

/// Number of masking steps for step size `delta`; `1/delta` must be integral.
pub fn step_count(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Range(format!("step size {delta} outside (0, 1]")));
    }
    let steps = (1.0 / delta).round();
    if (steps * delta - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("step size {delta} does not divide 1")));
    }
    Ok(steps as usize)
}

/// Cumulative tokens masked after step `i` of `steps` for length `len`: `⌈i·len/steps⌉`.
pub fn cumulative_count(i: usize, steps: usize, len: usize) -> usize {
    (i * len).div_ceil(steps).min(len)
}

fn class_for<C: Classifier + ?Sized>(model: &C, ex: &LabeledExample, target: ExplainTarget) -> Result<Label> {
    Ok(match target {
        ExplainTarget::Gold => ex.gold,
        ExplainTarget::Predicted => model.forward(&ex.sequence)?.predicted(),
    })
}

fn performance<C: Classifier + ?Sized>(model: &C, data: &[LabeledExample], opts: &RecursiveEvalOptions) -> Result<f64> {
    crate::model::evaluate(model, data, opts.metric, opts.n_labels)
}

/// Retraining-free faithfulness curve: re-explain the partially masked
/// input at every step and mask the next `δ·T` most important tokens.
pub fn recursive_eval<C: Classifier + ?Sized>(
    im: &ImportanceMeasure,
    model: &C,
    dataset: &[LabeledExample],
    opts: &RecursiveEvalOptions,
) -> Result<RecursiveEval> {
    let steps = step_count(opts.delta)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("faithfulness evaluation needs observations"));
    }
    if !opts.masked_fine_tuned {
        log::warn!(
            "{}: model was not trained with masked fine-tuning; masked inputs may be out of distribution",
            im.name()
        );
    }
    let mut current = dataset.to_vec();
    let mut points = vec![CurvePoint { ratio: 0.0, performance: performance(model, &current, opts)? }];
    let mut levels = vec![current.clone()];
    for i in 1..=steps {
        current = current
            .par_iter()
            .enumerate()
            .map(|(idx, ex)| {
                let wrap = |e: Error| Error::Observation { id: ex.id, source: Box::new(e) };
                let mut rng = child(opts.seed, &[idx as u64, i as u64]);
                let class = class_for(model, ex, opts.target).map_err(wrap)?;
                let explanation = im.explain(model, &ex.sequence, class, &mut rng).map_err(wrap)?;
                let goal = cumulative_count(i, steps, ex.sequence.len());
                let k = goal.saturating_sub(ex.sequence.masked_count());
                let masked = mask_top_k(&ex.sequence, &explanation.scores, k).map_err(wrap)?;
                Ok(LabeledExample { sequence: masked.sequence, ..ex.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(CurvePoint { ratio: i as f64 / steps as f64, performance: performance(model, &current, opts)? });
        levels.push(current.clone());
    }
    let curve = FaithfulnessCurve::new(im.name(), opts.metric, points)?;
    Ok(RecursiveEval { curve, levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_counts() {
        assert_eq!(step_count(0.1).unwrap(), 10);
        assert_eq!(step_count(1.0).unwrap(), 1);
        assert!(step_count(0.3).is_err());
        assert!(step_count(0.0).is_err());
    }

    #[test]
    fn cumulative_counts_round_up() {
        assert_eq!(cumulative_count(1, 10, 7), 1);
        assert_eq!(cumulative_count(5, 10, 7), 4);
        assert_eq!(cumulative_count(10, 10, 7), 7);
        assert_eq!(cumulative_count(3, 10, 10), 3);
    }
}
