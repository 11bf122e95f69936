use super::{Explanation, ScoreKind};
use crate::data::{Label, TokenSequence};
use crate::model::{Classifier, Embedded, GradTarget};
use crate::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub const DEFAULT_IG_STEPS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PNorm {
    L1,
    L2,
    Linf,
}

impl PNorm {
    pub fn name(self) -> &'static str {
        match self {
            PNorm::L1 => "l1",
            PNorm::L2 => "l2",
            PNorm::Linf => "linf",
        }
    }

    pub fn apply(self, g: &DVector<f64>) -> f64 {
        match self {
            PNorm::L1 => g.iter().map(|x| x.abs()).sum(),
            PNorm::L2 => g.norm(),
            PNorm::Linf => g.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// Per-token norm of the input gradient of `p(class | seq)`.
pub fn explain_gradient<C: Classifier + ?Sized>(
    model: &C,
    seq: &TokenSequence,
    class: Label,
    norm: PNorm,
) -> Result<Explanation> {
    let g = model.grad_input(seq, class)?;
    let scores = g.iter().map(|gi| norm.apply(gi)).collect();
    Ok(Explanation::new(scores, ScoreKind::Absolute, format!("gradient-{}", norm.name())))
}

/// Per-token `e_i · ∂p(class)/∂e_i`.
pub fn explain_input_x_grad<C: Classifier + ?Sized>(
    model: &C,
    seq: &TokenSequence,
    class: Label,
    kind: ScoreKind,
) -> Result<Explanation> {
    model.check_class(class)?;
    let e = model.embed(seq)?;
    let g = model.grad_embedded(&e, class, GradTarget::Probability);
    let scores = e.iter().zip(&g).map(|(ei, gi)| ei.dot(gi)).collect();
    Ok(Explanation::new(scores, kind, "input-x-gradient"))
}

/// Integrated gradient of the class logit from the fully masked baseline.
pub fn explain_integrated_gradient<C: Classifier + ?Sized>(
    model: &C,
    seq: &TokenSequence,
    class: Label,
    steps: usize,
    kind: ScoreKind,
) -> Result<Explanation> {
    explain_integrated_gradient_with(model, seq, class, steps, kind, GradTarget::Logit)
}

/// Right Riemann sum over `b + (i/k)(x − b)`, `i = 1..=k`.
pub fn explain_integrated_gradient_with<C: Classifier + ?Sized>(
    model: &C,
    seq: &TokenSequence,
    class: Label,
    steps: usize,
    kind: ScoreKind,
    target: GradTarget,
) -> Result<Explanation> {
    if steps == 0 {
        return Err(Error::Range("integrated gradient needs at least one step".into()));
    }
    model.check_class(class)?;
    let x = model.embed(seq)?;
    let b = model.embed(&seq.fully_masked())?;
    let diff: Embedded = x.iter().zip(&b).map(|(xi, bi)| xi - bi).collect();
    let mut acc: Embedded = diff.iter().map(|d| DVector::zeros(d.len())).collect();
    for i in 1..=steps {
        let t = i as f64 / steps as f64;
        let point: Embedded = b.iter().zip(&diff).map(|(bi, di)| bi + di * t).collect();
        for (a, g) in acc.iter_mut().zip(model.grad_embedded(&point, class, target)) {
            *a += g;
        }
    }
    let scores = diff.iter().zip(&acc).map(|(d, a)| d.dot(a) / steps as f64).collect();
    Ok(Explanation::new(scores, kind, "integrated-gradient"))
}

/// `f(x)_c − f(x with token i masked)_c` on logits.
pub fn explain_leave_one_out<C: Classifier + ?Sized>(
    model: &C,
    seq: &TokenSequence,
    class: Label,
    kind: ScoreKind,
) -> Result<Explanation> {
    model.check_class(class)?;
    let full = model.forward(seq)?.logits[class];
    let mut scores = Vec::with_capacity(seq.len());
    for i in 0..seq.len() {
        let mut masked = seq.clone();
        masked.mask(i);
        scores.push(full - model.forward(&masked)?.logits[class]);
    }
    Ok(Explanation::new(scores, kind, "leave-one-out"))
}

pub fn explain_attention<C: Classifier + ?Sized>(model: &C, seq: &TokenSequence) -> Result<Explanation> {
    if !model.has_attention() {
        return Err(Error::Unsupported("model exposes no attention weights".into()));
    }
    let att = model.forward(seq)?.attention.expect("attention model returns weights");
    Ok(Explanation::new(att, ScoreKind::Absolute, "attention"))
}

pub fn explain_random<R: rand::Rng + ?Sized>(seq: &TokenSequence, rng: &mut R) -> Explanation {
    let scores = (0..seq.len()).map(|_| rng.random::<f64>()).collect();
    Explanation::new(scores, ScoreKind::Absolute, "random")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttentionClassifier, LinearTokenModel, ModelOutput};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn model(seed: u64) -> AttentionClassifier {
        AttentionClassifier::new_random(6, 3, 3, &mut crate::rng::seeded(seed))
    }

    #[test]
    fn one_dimensional_norms_agree() {
        let m = AttentionClassifier::new_random(6, 1, 2, &mut crate::rng::seeded(1));
        let seq = TokenSequence::new(vec![1, 2, 3]);
        let l1 = explain_gradient(&m, &seq, 0, PNorm::L1).unwrap().scores;
        let l2 = explain_gradient(&m, &seq, 0, PNorm::L2).unwrap().scores;
        let li = explain_gradient(&m, &seq, 0, PNorm::Linf).unwrap().scores;
        assert_eq!(l1, l2);
        assert_eq!(l1, li);
    }

    #[test]
    fn gradient_scores_match_finite_differences() {
        let m = model(2);
        let seq = TokenSequence::new(vec![1, 4, 2, 5]);
        let scores = explain_gradient(&m, &seq, 1, PNorm::L2).unwrap().scores;
        let e = m.embed(&seq).unwrap();
        let h = 1e-5;
        for i in 0..e.len() {
            let mut g = DVector::zeros(3);
            for j in 0..3 {
                let mut p = e.clone();
                p[i][j] += h;
                let mut q = e.clone();
                q[i][j] -= h;
                g[j] = (m.forward_embedded(&p).probabilities[1] - m.forward_embedded(&q).probabilities[1]) / (2.0 * h);
            }
            assert!((g.norm() - scores[i]).abs() < 1e-4 * scores[i].max(1e-8));
        }
    }

    #[test]
    fn input_x_grad_oracle_and_zero_mask() {
        let mut m = model(3);
        m.embedding.row_mut(0).fill(0.0);
        let mut seq = TokenSequence::new(vec![1, 2, 3]);
        seq.mask(1);
        let signed = explain_input_x_grad(&m, &seq, 2, ScoreKind::Signed).unwrap().scores;
        assert_eq!(signed[1], 0.0);
        let e = m.embed(&seq).unwrap();
        let g = m.grad_embedded(&e, 2, GradTarget::Probability);
        for i in 0..3 {
            let oracle: f64 = (0..3).map(|j| e[i][j] * g[i][j]).sum();
            assert!((oracle - signed[i]).abs() < 1e-12);
        }
        let abs = explain_input_x_grad(&m, &seq, 2, ScoreKind::Absolute).unwrap().scores;
        assert_eq!(abs, signed.iter().map(|s| s.abs()).collect::<Vec<_>>());
    }

    #[test]
    fn ig_zero_at_baseline_and_exact_for_linear() {
        let m = model(4);
        let seq = TokenSequence::new(vec![1, 2]).fully_masked();
        let s = explain_integrated_gradient(&m, &seq, 0, 10, ScoreKind::Signed).unwrap().scores;
        assert!(s.iter().all(|&v| v == 0.0));

        let lin = LinearTokenModel::new_random(6, 3, 2, &mut crate::rng::seeded(5));
        let seq = TokenSequence::new(vec![3, 1, 4]);
        let f = |s: &TokenSequence| lin.forward(s).unwrap().logits[1];
        let delta = f(&seq) - f(&seq.fully_masked());
        for k in [1, 2, 7] {
            let ig = explain_integrated_gradient(&lin, &seq, 1, k, ScoreKind::Signed).unwrap().scores;
            assert!((ig.iter().sum::<f64>() - delta).abs() < 1e-12);
        }
    }

    struct Counting<'a> {
        inner: &'a AttentionClassifier,
        calls: AtomicUsize,
    }

    impl Classifier for Counting<'_> {
        fn num_classes(&self) -> usize {
            self.inner.num_classes()
        }
        fn embedding_dim(&self) -> usize {
            self.inner.embedding_dim()
        }
        fn vocab_size(&self) -> usize {
            self.inner.vocab_size()
        }
        fn num_layers(&self) -> usize {
            self.inner.num_layers()
        }
        fn embedding_row(&self, id: usize) -> DVector<f64> {
            self.inner.embedding_row(id)
        }
        fn forward_embedded(&self, e: &[DVector<f64>]) -> ModelOutput {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.forward_embedded(e)
        }
        fn grad_embedded(&self, e: &[DVector<f64>], class: Label, target: GradTarget) -> Embedded {
            self.inner.grad_embedded(e, class, target)
        }
    }

    #[test]
    fn leave_one_out_counts_and_oracle() {
        let mut m = model(6);
        let mask_row = m.embedding.row(0).into_owned();
        m.embedding.row_mut(5).copy_from(&mask_row);
        let seq = TokenSequence::new(vec![1, 5, 2, 3]);
        let counting = Counting { inner: &m, calls: AtomicUsize::new(0) };
        let loo = explain_leave_one_out(&counting, &seq, 0, ScoreKind::Signed).unwrap().scores;
        assert_eq!(counting.calls.load(Ordering::SeqCst), seq.len() + 1);
        assert_eq!(loo[1], 0.0);
        for i in 0..seq.len() {
            let mut toks = seq.tokens().to_vec();
            toks[i] = 0;
            let brute = m.forward(&seq).unwrap().logits[0] - m.forward(&TokenSequence::new(toks)).unwrap().logits[0];
            assert!((brute - loo[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_pass_through() {
        let m = model(7);
        let seq = TokenSequence::new(vec![2, 2, 2]);
        let att = explain_attention(&m, &seq).unwrap().scores;
        assert_eq!(att, m.forward(&seq).unwrap().attention.unwrap());
        assert!(att.iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
        let lin = LinearTokenModel::new_random(6, 3, 2, &mut crate::rng::seeded(5));
        assert!(matches!(explain_attention(&lin, &seq), Err(Error::Unsupported(_))));
    }

    #[test]
    fn random_top_rank_frequency() {
        let seq = TokenSequence::new(vec![1; 5]);
        let mut rng = crate::rng::seeded(8);
        let trials = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..trials {
            let s = explain_random(&seq, &mut rng).scores;
            counts[crate::model::argmax(&s)] += 1;
        }
        let p = 0.2;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
        let a = explain_random(&seq, &mut crate::rng::seeded(1));
        let b = explain_random(&seq, &mut crate::rng::seeded(1));
        let c = explain_random(&seq, &mut crate::rng::seeded(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
