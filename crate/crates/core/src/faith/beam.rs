use crate::data::{Label, TokenSequence};
use crate::model::Classifier;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Upper bound on `B·T²` forward passes accepted by [`beam_optimize`].
pub const DEFAULT_BEAM_CAP: usize = 5_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamObjective {
    #[default]
    ProbabilityDrop,
    LogitDrop,
}

/// Token positions in masking order, with the cumulative drop they achieve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskingOrder {
    pub positions: Vec<usize>,
    pub objective: f64,
}

impl MaskingOrder {
    /// Scores that make top-k masking reproduce this order.
    pub fn to_scores(&self, len: usize) -> Vec<f64> {
        let mut scores = vec![0.0; len];
        let n = self.positions.len();
        for (rank, &pos) in self.positions.iter().enumerate() {
            scores[pos] = (n - rank) as f64;
        }
        scores
    }
}

#[derive(Clone)]
struct Beam {
    seq: TokenSequence,
    order: Vec<usize>,
    score: f64,
}

/// Beam search over masking orders maximising `Σ_t (f₀ − f_t)`, where `f_t`
/// is the class probability (or logit) after masking the first `t` tokens.
pub fn beam_optimize<C: Classifier + ?Sized>(
    model: &C,
    seq: &TokenSequence,
    class: Label,
    width: usize,
    objective: BeamObjective,
    cap: usize,
) -> Result<MaskingOrder> {
    if width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    model.check_class(class)?;
    let t = seq.len() - seq.masked_count();
    let cost = width.saturating_mul(t).saturating_mul(t);
    if cost > cap {
        return Err(Error::Capacity(format!("beam search needs ~{cost} forward passes, cap is {cap}")));
    }
    let value = |s: &TokenSequence| -> Result<f64> {
        let out = model.forward(s)?;
        Ok(match objective {
            BeamObjective::ProbabilityDrop => out.probabilities[class],
            BeamObjective::LogitDrop => out.logits[class],
        })
    };
    let f0 = value(seq)?;
    let mut beams = vec![Beam { seq: seq.clone(), order: Vec::new(), score: 0.0 }];
    for _ in 0..t {
        let mut best: HashMap<Vec<bool>, Beam> = HashMap::new();
        for beam in &beams {
            for pos in beam.seq.unmasked_positions() {
                let mut next = beam.seq.clone();
                next.mask(pos);
                let score = beam.score + (f0 - value(&next)?);
                let mut order = beam.order.clone();
                order.push(pos);
                let cand = Beam { seq: next, order, score };
                let key = cand.seq.mask_flags().to_vec();
                match best.get(&key) {
                    Some(b) if !better(&cand, b) => {}
                    _ => {
                        best.insert(key, cand);
                    }
                }
            }
        }
        let mut next: Vec<Beam> = best.into_values().collect();
        next.sort_by(|a, b| if better(a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
        next.truncate(width);
        beams = next;
    }
    let best = beams.into_iter().next().expect("at least one beam");
    Ok(MaskingOrder { positions: best.order, objective: best.score })
}

/// Higher score wins; ties go to the lexicographically smaller order.
fn better(a: &Beam, b: &Beam) -> bool {
    a.score > b.score || (a.score == b.score && a.order < b.order)
}
