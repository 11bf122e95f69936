use crate::data::MetricKind;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

const GRID_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub ratio: f64,
    pub performance: f64,
}

/// Performance as a function of masking ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessCurve {
    pub id: String,
    pub metric: MetricKind,
    pub points: Vec<CurvePoint>,
}

impl FaithfulnessCurve {
    /// Validates that ratios increase strictly from 0 to 1.
    pub fn new(id: impl Into<String>, metric: MetricKind, points: Vec<CurvePoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Dimension("a curve needs at least two points".into()));
        }
        if points[0].ratio.abs() > GRID_TOL || (points[points.len() - 1].ratio - 1.0).abs() > GRID_TOL {
            return Err(Error::Range("curve ratios must start at 0 and end at 1".into()));
        }
        if points.windows(2).any(|w| w[1].ratio <= w[0].ratio) {
            return Err(Error::Range("curve ratios must be strictly increasing".into()));
        }
        Ok(FaithfulnessCurve { id: id.into(), metric, points })
    }

    pub fn from_values(id: impl Into<String>, metric: MetricKind, ratios: &[f64], perf: &[f64]) -> Result<Self> {
        if ratios.len() != perf.len() {
            return Err(Error::Dimension(format!("{} ratios but {} values", ratios.len(), perf.len())));
        }
        let points = ratios.iter().zip(perf).map(|(&ratio, &performance)| CurvePoint { ratio, performance }).collect();
        Self::new(id, metric, points)
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.ratio).collect()
    }

    pub fn performances(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.performance).collect()
    }

    /// Inserts `extra` evenly spaced points inside every interval by linear interpolation.
    pub fn refine(&self, extra: usize) -> FaithfulnessCurve {
        let mut points = Vec::with_capacity(self.points.len() * (extra + 1));
        for w in self.points.windows(2) {
            for s in 0..=extra {
                let t = s as f64 / (extra + 1) as f64;
                points.push(CurvePoint {
                    ratio: w[0].ratio + t * (w[1].ratio - w[0].ratio),
                    performance: w[0].performance + t * (w[1].performance - w[0].performance),
                });
            }
        }
        points.push(*self.points.last().expect("nonempty curve"));
        FaithfulnessCurve { id: self.id.clone(), metric: self.metric, points }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessScore {
    pub acu: f64,
    /// `None` when the normaliser is not positive.
    pub racu: Option<f64>,
    pub normalizer: f64,
    pub baseline_curve_id: String,
    pub explanation_curve_id: String,
}

/// Trapezoid area between the baseline and explanation curves, and that
/// area relative to the area between the baseline and its final value.
///
/// Explanation below baseline counts as positive area.
pub fn compute_acu_racu(explanation: &FaithfulnessCurve, baseline: &FaithfulnessCurve) -> Result<FaithfulnessScore> {
    if explanation.points.len() != baseline.points.len()
        || explanation.points.iter().zip(&baseline.points).any(|(a, b)| (a.ratio - b.ratio).abs() > GRID_TOL)
    {
        return Err(Error::Dimension("explanation and baseline curves use different ratio grids".into()));
    }
    let b_final = baseline.points.last().expect("validated curve").performance;
    let mut acu = 0.0;
    let mut normalizer = 0.0;
    for i in 0..baseline.points.len() - 1 {
        let (b0, b1) = (baseline.points[i], baseline.points[i + 1]);
        let (p0, p1) = (explanation.points[i], explanation.points[i + 1]);
        let dx = b1.ratio - b0.ratio;
        acu += 0.5 * dx * ((b0.performance - p0.performance) + (b1.performance - p1.performance));
        normalizer += 0.5 * dx * ((b0.performance - b_final) + (b1.performance - b_final));
    }
    Ok(FaithfulnessScore {
        acu,
        racu: (normalizer > 0.0).then(|| acu / normalizer),
        normalizer,
        baseline_curve_id: baseline.id.clone(),
        explanation_curve_id: explanation.id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(id: &str, ratios: &[f64], perf: &[f64]) -> FaithfulnessCurve {
        FaithfulnessCurve::from_values(id, MetricKind::Accuracy, ratios, perf).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(FaithfulnessCurve::from_values("x", MetricKind::Accuracy, &[0.0, 0.5], &[1.0, 1.0]).is_err());
        assert!(FaithfulnessCurve::from_values("x", MetricKind::Accuracy, &[0.0, 0.5, 0.5, 1.0], &[1.0; 4]).is_err());
        let a = curve("a", &[0.0, 1.0], &[1.0, 0.5]);
        let b = curve("b", &[0.0, 0.5, 1.0], &[1.0, 0.7, 0.5]);
        assert!(compute_acu_racu(&a, &b).is_err());
    }

    #[test]
    fn flat_baseline_has_no_racu() {
        let b = curve("b", &[0.0, 1.0], &[0.5, 0.5]);
        let s = compute_acu_racu(&b, &b).unwrap();
        assert_eq!(s.acu, 0.0);
        assert_eq!(s.racu, None);
    }

    fn grid() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (2usize..12).prop_flat_map(|n| {
            (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(0.0f64..1.0, n)).prop_map(move |(a, b)| {
                let ratios = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
                (ratios, a, b)
            })
        })
    }

    proptest! {
        #[test]
        fn translation_invariant((r, a, b) in grid(), c in -1.0f64..1.0) {
            let s = compute_acu_racu(&curve("e", &r, &a), &curve("b", &r, &b)).unwrap();
            let a2: Vec<f64> = a.iter().map(|v| v + c).collect();
            let b2: Vec<f64> = b.iter().map(|v| v + c).collect();
            let t = compute_acu_racu(&curve("e", &r, &a2), &curve("b", &r, &b2)).unwrap();
            prop_assert!((s.acu - t.acu).abs() < 1e-12);
        }

        #[test]
        fn refinement_invariant((r, a, b) in grid(), extra in 1usize..5) {
            let (e, base) = (curve("e", &r, &a), curve("b", &r, &b));
            let s = compute_acu_racu(&e, &base).unwrap();
            let t = compute_acu_racu(&e.refine(extra), &base.refine(extra)).unwrap();
            prop_assert!((s.acu - t.acu).abs() < 1e-12);
            prop_assert!((s.normalizer - t.normalizer).abs() < 1e-12);
        }
    }
}
