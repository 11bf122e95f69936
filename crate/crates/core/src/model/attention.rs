//! Single-sequence additive attention over token embeddings:
//! `u_i = tanh(W e_i + b)`, `α = softmax(u_i·v)`, `h = Σ α_i e_i`, `logits = head·h`.

use super::{cross_entropy, softmax, target_logit_grad, Classifier, Embedded, GradTarget, ModelOutput};
use crate::data::Label;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionClassifier {
    /// `vocab × d`; row 0 is the trainable mask embedding.
    pub embedding: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub v: DVector<f64>,
    /// `classes × d`.
    pub head: DMatrix<f64>,
}

/// Parameter gradients, same shapes as the model.
#[derive(Clone, Debug)]
pub struct AttentionGrads {
    pub embedding: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub v: DVector<f64>,
    pub head: DMatrix<f64>,
}

struct Trace {
    u: Vec<DVector<f64>>,
    alpha: Vec<f64>,
    h: DVector<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl AttentionClassifier {
    pub fn new_random<R: rand::Rng + ?Sized>(vocab: usize, dim: usize, classes: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw = |rows: usize, cols: usize, s: f64| DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng) * s);
        let embedding = draw(vocab, dim, scale);
        let w = draw(dim, dim, scale);
        let v = draw(dim, 1, scale).column(0).into_owned();
        let head = draw(classes, dim, scale);
        AttentionClassifier { embedding, w, b: DVector::zeros(dim), v, head }
    }

    pub fn zero_grads(&self) -> AttentionGrads {
        AttentionGrads {
            embedding: DMatrix::zeros(self.embedding.nrows(), self.embedding.ncols()),
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            b: DVector::zeros(self.b.len()),
            v: DVector::zeros(self.v.len()),
            head: DMatrix::zeros(self.head.nrows(), self.head.ncols()),
        }
    }

    fn trace(&self, e: &[DVector<f64>]) -> Trace {
        let u: Vec<DVector<f64>> = e.iter().map(|ei| (&self.w * ei + &self.b).map(f64::tanh)).collect();
        let scores: Vec<f64> = u.iter().map(|ui| ui.dot(&self.v)).collect();
        let alpha = softmax(&scores);
        let mut h = DVector::zeros(self.embedding.ncols());
        for (a, ei) in alpha.iter().zip(e) {
            h.axpy(*a, ei, 1.0);
        }
        let z = &self.head * &h;
        let logits: Vec<f64> = z.iter().copied().collect();
        let probs = softmax(&logits);
        Trace { u, alpha, h, logits, probs }
    }

    /// Backpropagates `gz = dT/dlogits`, returning token-embedding gradients
    /// and, when `params` is given, accumulating parameter gradients into it.
    fn backward(&self, e: &[DVector<f64>], t: &Trace, gz: &[f64], mut params: Option<&mut AttentionGrads>) -> Embedded {
        let gz = DVector::from_column_slice(gz);
        let gh = self.head.tr_mul(&gz);
        let gh_h = gh.dot(&t.h);
        let mut out = Vec::with_capacity(e.len());
        for (i, ei) in e.iter().enumerate() {
            let ds = t.alpha[i] * (gh.dot(ei) - gh_h);
            let q = self.v.component_mul(&t.u[i].map(|x| 1.0 - x * x)) * ds;
            let grad = &gh * t.alpha[i] + self.w.tr_mul(&q);
            if let Some(p) = params.as_deref_mut() {
                p.w.ger(1.0, &q, ei, 1.0);
                p.b += &q;
                p.v.axpy(ds, &t.u[i], 1.0);
            }
            out.push(grad);
        }
        if let Some(p) = params {
            p.head.ger(1.0, &gz, &t.h, 1.0);
        }
        out
    }

    /// Mean cross-entropy over `batch` (pairs of effective tokens and gold
    /// label), accumulating its gradient into `grads`.
    pub fn loss_and_grad(&self, batch: &[(Vec<usize>, Label)], grads: &mut AttentionGrads) -> f64 {
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for (tokens, gold) in batch {
            let e: Embedded = tokens.iter().map(|&id| self.embedding_row(id)).collect();
            let t = self.trace(&e);
            loss += cross_entropy(&t.logits, *gold);
            let gz: Vec<f64> =
                t.probs.iter().enumerate().map(|(k, p)| (p - f64::from(u8::from(k == *gold))) / n).collect();
            let de = self.backward(&e, &t, &gz, Some(grads));
            for (&id, g) in tokens.iter().zip(&de) {
                let mut row = grads.embedding.row_mut(id);
                row += g.transpose();
            }
        }
        loss / n
    }

    pub fn apply(&mut self, g: &AttentionGrads, lr: f64) {
        self.embedding -= &g.embedding * lr;
        self.w -= &g.w * lr;
        self.b -= &g.b * lr;
        self.v -= &g.v * lr;
        self.head -= &g.head * lr;
    }
}

impl Classifier for AttentionClassifier {
    fn num_classes(&self) -> usize {
        self.head.nrows()
    }

    fn embedding_dim(&self) -> usize {
        self.embedding.ncols()
    }

    fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    fn num_layers(&self) -> usize {
        2
    }

    fn embedding_row(&self, id: usize) -> DVector<f64> {
        self.embedding.row(id).transpose()
    }

    fn forward_embedded(&self, e: &[DVector<f64>]) -> ModelOutput {
        let t = self.trace(e);
        let layer0 = e.iter().map(|x| x.iter().copied().collect()).collect();
        let layer1 = t.u.iter().map(|x| x.iter().copied().collect()).collect();
        ModelOutput {
            logits: t.logits,
            probabilities: t.probs,
            attention: Some(t.alpha),
            embeddings: vec![layer0, layer1],
        }
    }

    fn grad_embedded(&self, e: &[DVector<f64>], class: Label, target: GradTarget) -> Embedded {
        let t = self.trace(e);
        let gz = target_logit_grad(&t.probs, class, target);
        self.backward(e, &t, &gz, None)
    }

    fn has_attention(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TokenSequence;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn tiny() -> AttentionClassifier {
        AttentionClassifier {
            embedding: dmatrix![0.0, 0.0; 0.5, -1.0; 1.5, 0.25],
            w: dmatrix![0.3, -0.2; 0.7, 0.1],
            b: DVector::from_vec(vec![0.05, -0.1]),
            v: DVector::from_vec(vec![1.2, -0.4]),
            head: dmatrix![0.9, -0.3; -0.6, 0.8],
        }
    }

    #[test]
    fn straight_line_forward() {
        // independent scalar re-implementation for tokens [1, 2]
        let e: [[f64; 2]; 2] = [[0.5, -1.0], [1.5, 0.25]];
        let w = [[0.3, -0.2], [0.7, 0.1]];
        let b = [0.05, -0.1];
        let v = [1.2, -0.4];
        let head = [[0.9, -0.3], [-0.6, 0.8]];
        let mut s = [0.0f64; 2];
        for i in 0..2 {
            for r in 0..2 {
                let a: f64 = w[r][0] * e[i][0] + w[r][1] * e[i][1] + b[r];
                s[i] += a.tanh() * v[r];
            }
        }
        let m = s[0].max(s[1]);
        let (x0, x1) = ((s[0] - m).exp(), (s[1] - m).exp());
        let alpha = [x0 / (x0 + x1), x1 / (x0 + x1)];
        let h = [alpha[0] * e[0][0] + alpha[1] * e[1][0], alpha[0] * e[0][1] + alpha[1] * e[1][1]];
        let logits = [head[0][0] * h[0] + head[0][1] * h[1], head[1][0] * h[0] + head[1][1] * h[1]];
        let out = tiny().forward(&TokenSequence::new(vec![1, 2])).unwrap();
        for c in 0..2 {
            assert!((out.logits[c] - logits[c]).abs() < 1e-12);
        }
        for i in 0..2 {
            assert!((out.attention.as_ref().unwrap()[i] - alpha[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_shapes() {
        let m = tiny();
        let one = m.forward(&TokenSequence::new(vec![2])).unwrap();
        assert_eq!(one.attention.unwrap(), vec![1.0]);
        let two = m.forward(&TokenSequence::new(vec![1, 1])).unwrap();
        assert_eq!(two.attention.unwrap(), vec![0.5, 0.5]);
        assert_eq!(two.embeddings.len(), 2);
        assert!(matches!(m.forward(&TokenSequence::new(vec![9])), Err(crate::Error::Vocabulary { id: 9, .. })));
    }

    #[test]
    fn zero_head_zero_gradient() {
        let mut m = tiny();
        m.head.fill(0.0);
        let g = m.grad_input(&TokenSequence::new(vec![1, 2]), 0).unwrap();
        assert!(g.iter().all(|x| x.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut rng = crate::rng::seeded(4);
        let m = AttentionClassifier::new_random(5, 3, 2, &mut rng);
        let batch = vec![(vec![1, 2, 0], 1), (vec![3, 4], 0)];
        let mut g = m.zero_grads();
        m.loss_and_grad(&batch, &mut g);
        let loss = |m: &AttentionClassifier| m.loss_and_grad(&batch, &mut m.zero_grads());
        let h = 1e-6;
        for (r, c) in [(1, 0), (2, 2), (0, 1)] {
            let mut p = m.clone();
            p.embedding[(r, c)] += h;
            let mut q = m.clone();
            q.embedding[(r, c)] -= h;
            let fd = (loss(&p) - loss(&q)) / (2.0 * h);
            assert!((fd - g.embedding[(r, c)]).abs() < 1e-7, "E[{r},{c}]");
        }
        for (r, c) in [(0, 0), (1, 2)] {
            let mut p = m.clone();
            p.w[(r, c)] += h;
            let mut q = m.clone();
            q.w[(r, c)] -= h;
            assert!(((loss(&p) - loss(&q)) / (2.0 * h) - g.w[(r, c)]).abs() < 1e-7);
            let mut p = m.clone();
            p.head[(r, c)] += h;
            let mut q = m.clone();
            q.head[(r, c)] -= h;
            assert!(((loss(&p) - loss(&q)) / (2.0 * h) - g.head[(r, c)]).abs() < 1e-7);
        }
        for i in 0..3 {
            let mut p = m.clone();
            p.v[i] += h;
            let mut q = m.clone();
            q.v[i] -= h;
            assert!(((loss(&p) - loss(&q)) / (2.0 * h) - g.v[i]).abs() < 1e-7);
            let mut p = m.clone();
            p.b[i] += h;
            let mut q = m.clone();
            q.b[i] -= h;
            assert!(((loss(&p) - loss(&q)) / (2.0 * h) - g.b[i]).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn outputs_are_distributions(seed in any::<u64>(), tokens in prop::collection::vec(0usize..6, 1..8)) {
            let m = AttentionClassifier::new_random(6, 3, 3, &mut crate::rng::seeded(seed));
            let out = m.forward(&TokenSequence::new(tokens)).unwrap();
            let total: f64 = out.probabilities.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            let att = out.attention.clone().unwrap();
            prop_assert!(att.iter().all(|&a| a >= 0.0));
            prop_assert!((att.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert_eq!(super::super::argmax(&out.probabilities), out.predicted());
        }
    }
}
