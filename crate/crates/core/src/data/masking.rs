use super::{LabeledExample, TokenSequence};
use crate::{Error, Result};

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Range(format!("masking ratio {ratio} outside [0, 1]")));
    }
    Ok(())
}

/// Masks each unmasked position independently with probability `ratio`.
///
/// One uniform draw is consumed per position, masked or not, so the RNG
/// stream advances identically for every ratio.
pub fn mask_tokens<R: rand::Rng + ?Sized>(seq: &TokenSequence, ratio: f64, rng: &mut R) -> Result<TokenSequence> {
    check_ratio(ratio)?;
    let mut out = seq.clone();
    for i in 0..seq.len() {
        let u: f64 = rng.random();
        if u < ratio {
            out.mask(i);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopKMasking {
    pub sequence: TokenSequence,
    /// Positions newly masked, in masking order.
    pub masked: Vec<usize>,
    /// True when fewer than `k` unmasked positions were available.
    pub saturated: bool,
}

/// Masks the `k` highest-scoring unmasked positions; ties go to the lowest index.
pub fn mask_top_k(seq: &TokenSequence, scores: &[f64], k: usize) -> Result<TopKMasking> {
    if scores.len() != seq.len() {
        return Err(Error::Dimension(format!("{} scores for a sequence of length {}", scores.len(), seq.len())));
    }
    let mut candidates: Vec<usize> = seq.unmasked_positions().collect();
    let saturated = k > candidates.len();
    // NaN sorts below every real score
    let key = |i: usize| if scores[i].is_nan() { f64::NEG_INFINITY } else { scores[i] };
    candidates.sort_by(|&i, &j| key(j).total_cmp(&key(i)).then(i.cmp(&j)));
    candidates.truncate(k);
    let mut sequence = seq.clone();
    for &i in &candidates {
        sequence.mask(i);
    }
    Ok(TopKMasking { sequence, masked: candidates, saturated })
}

/// Masked fine-tuning batch transform: with 1-based index `i`, every even
/// example is masked at a ratio drawn by `ratio_sampler`; odd ones pass through.
pub fn build_masked_minibatch_with<R, F>(
    batch: &[LabeledExample],
    rng: &mut R,
    mut ratio_sampler: F,
) -> Result<Vec<LabeledExample>>
where
    R: rand::Rng + ?Sized,
    F: FnMut(&mut R) -> f64,
{
    batch
        .iter()
        .enumerate()
        .map(|(idx, ex)| {
            if (idx + 1) % 2 == 0 {
                let r = ratio_sampler(rng);
                Ok(LabeledExample { sequence: mask_tokens(&ex.sequence, r, rng)?, ..ex.clone() })
            } else {
                Ok(ex.clone())
            }
        })
        .collect()
}

pub fn build_masked_minibatch<R: rand::Rng + ?Sized>(
    batch: &[LabeledExample],
    rng: &mut R,
) -> Result<Vec<LabeledExample>> {
    build_masked_minibatch_with(batch, rng, |r| r.random::<f64>())
}

/// Unmodified copy followed by a copy masked at per-example ratios from `ratio_sampler`.
pub fn dual_validation_with<R, F>(
    val: &[LabeledExample],
    rng: &mut R,
    mut ratio_sampler: F,
) -> Result<Vec<LabeledExample>>
where
    R: rand::Rng + ?Sized,
    F: FnMut(&mut R) -> f64,
{
    let mut out = val.to_vec();
    for ex in val {
        let r = ratio_sampler(rng);
        out.push(LabeledExample { sequence: mask_tokens(&ex.sequence, r, rng)?, ..ex.clone() });
    }
    Ok(out)
}

pub fn dual_validation<R: rand::Rng + ?Sized>(val: &[LabeledExample], rng: &mut R) -> Result<Vec<LabeledExample>> {
    dual_validation_with(val, rng, |r| r.random::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn examples(n: usize) -> Vec<LabeledExample> {
        (0..n).map(|i| LabeledExample { id: i, sequence: TokenSequence::new(vec![1, 2, 3, 4]), gold: i % 2 }).collect()
    }

    #[test]
    fn ratio_extremes() {
        let s = TokenSequence::new(vec![5, 6, 7]);
        let mut rng = seeded(0);
        assert_eq!(mask_tokens(&s, 0.0, &mut rng).unwrap(), s);
        assert_eq!(mask_tokens(&s, 1.0, &mut rng).unwrap().masked_count(), 3);
        assert!(matches!(mask_tokens(&s, 1.5, &mut rng), Err(Error::Range(_))));
    }

    #[test]
    fn half_ratio_mean_count() {
        let s = TokenSequence::new(vec![1; 1000]);
        let mut rng = seeded(9);
        let trials = 10_000;
        let total: usize = (0..trials).map(|_| mask_tokens(&s, 0.5, &mut rng).unwrap().masked_count()).sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 500.0).abs() <= 3.0 * 250f64.sqrt(), "{mean}");
    }

    #[test]
    fn top_k_examples() {
        let s = TokenSequence::new(vec![1, 2, 3]);
        let r = mask_top_k(&s, &[3.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(r.masked, vec![0]);
        let r = mask_top_k(&s, &[2.0, 2.0, 2.0], 2).unwrap();
        assert_eq!(r.masked, vec![0, 1]);
        assert!(!r.saturated);
        let r = mask_top_k(&s, &[2.0, 2.0, 2.0], 0).unwrap();
        assert_eq!(r.sequence, s);
        let r = mask_top_k(&s, &[2.0, 2.0, 2.0], 5).unwrap();
        assert!(r.saturated);
        assert_eq!(r.sequence.masked_count(), 3);
    }

    #[test]
    fn minibatch_transforms_even_indices() {
        let mut rng = seeded(1);
        let out = build_masked_minibatch_with(&examples(2), &mut rng, |_| 1.0).unwrap();
        assert_eq!(out[0].sequence.masked_count(), 0);
        assert_eq!(out[1].sequence.masked_count(), 4);
        let out = build_masked_minibatch_with(&examples(1), &mut rng, |_| 1.0).unwrap();
        assert_eq!(out[0].sequence.masked_count(), 0);
        let out = build_masked_minibatch_with(&examples(4), &mut rng, |_| 1.0).unwrap();
        let full: Vec<usize> = out.iter().filter(|e| e.sequence.masked_count() == 4).map(|e| e.id).collect();
        assert_eq!(full, vec![1, 3]);
    }

    #[test]
    fn dual_validation_doubles() {
        let val = examples(10);
        let mut rng = seeded(2);
        let out = dual_validation(&val, &mut rng).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(&out[..10], &val[..]);
        let out = dual_validation_with(&val, &mut rng, |_| 0.0).unwrap();
        assert_eq!(&out[..10], &out[10..]);
    }

    proptest! {
        #[test]
        fn top_k_is_monotone(scores in prop::collection::vec(-5.0f64..5.0, 1..20), steps in 1usize..5) {
            let mut seq = TokenSequence::new(vec![1; scores.len()]);
            for _ in 0..steps {
                let next = mask_top_k(&seq, &scores, 2).unwrap().sequence;
                for i in 0..seq.len() {
                    prop_assert!(!seq.is_masked(i) || next.is_masked(i));
                }
                let expected = (seq.masked_count() + 2).min(seq.len());
                prop_assert_eq!(next.masked_count(), expected);
                seq = next;
            }
        }

        #[test]
        fn minibatch_masks_floor_half(n in 0usize..30, seed in any::<u64>()) {
            let batch = examples(n);
            let out = build_masked_minibatch_with(&batch, &mut seeded(seed), |_| 1.0).unwrap();
            let changed = out.iter().zip(&batch).filter(|(a, b)| a != b).count();
            prop_assert_eq!(changed, n / 2);
        }

        #[test]
        fn dual_validation_preserves_labels(n in 0usize..20, seed in any::<u64>()) {
            let val = examples(n);
            let out = dual_validation(&val, &mut seeded(seed)).unwrap();
            for (i, ex) in out.iter().enumerate() {
                prop_assert_eq!(ex.gold, val[i % n.max(1)].gold);
            }
        }
    }
}
