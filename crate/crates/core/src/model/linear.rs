use super::{cross_entropy, softmax, target_logit_grad, Classifier, Embedded, GradTarget, ModelOutput};
use crate::data::{Label, SyntheticTabularExample};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Sum-pooled bag of embeddings: `logits = head · Σ e_i + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearTokenModel {
    pub embedding: DMatrix<f64>,
    pub head: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LinearTokenModel {
    pub fn new_random<R: rand::Rng + ?Sized>(vocab: usize, dim: usize, classes: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let scale = 1.0 / (dim as f64).sqrt();
        LinearTokenModel {
            embedding: DMatrix::from_fn(vocab, dim, |_, _| normal.sample(rng)),
            head: DMatrix::from_fn(classes, dim, |_, _| normal.sample(rng) * scale),
            bias: DVector::zeros(classes),
        }
    }

    fn pooled(&self, e: &[DVector<f64>]) -> DVector<f64> {
        e.iter().fold(DVector::zeros(self.embedding.ncols()), |acc, x| acc + x)
    }

    /// Mean cross-entropy over `batch`; returns `(loss, d_embedding, d_head, d_bias)`.
    pub fn loss_and_grad(&self, batch: &[(Vec<usize>, Label)]) -> (f64, DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let n = batch.len() as f64;
        let mut de = DMatrix::zeros(self.embedding.nrows(), self.embedding.ncols());
        let mut dh = DMatrix::zeros(self.head.nrows(), self.head.ncols());
        let mut db = DVector::zeros(self.bias.len());
        let mut loss = 0.0;
        for (tokens, gold) in batch {
            let e: Embedded = tokens.iter().map(|&id| self.embedding_row(id)).collect();
            let h = self.pooled(&e);
            let z = &self.head * &h + &self.bias;
            let probs = softmax(z.as_slice());
            loss += cross_entropy(z.as_slice(), *gold);
            let gz = DVector::from_iterator(
                probs.len(),
                probs.iter().enumerate().map(|(k, p)| (p - f64::from(u8::from(k == *gold))) / n),
            );
            dh.ger(1.0, &gz, &h, 1.0);
            db += &gz;
            let gh = self.head.tr_mul(&gz);
            for &id in tokens {
                let mut row = de.row_mut(id);
                row += gh.transpose();
            }
        }
        (loss / n, de, dh, db)
    }
}

impl Classifier for LinearTokenModel {
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
        1
    }

    fn embedding_row(&self, id: usize) -> DVector<f64> {
        self.embedding.row(id).transpose()
    }

    fn forward_embedded(&self, e: &[DVector<f64>]) -> ModelOutput {
        let z = &self.head * self.pooled(e) + &self.bias;
        let logits: Vec<f64> = z.iter().copied().collect();
        ModelOutput {
            probabilities: softmax(&logits),
            logits,
            attention: None,
            embeddings: vec![e.iter().map(|x| x.iter().copied().collect()).collect()],
        }
    }

    fn grad_embedded(&self, e: &[DVector<f64>], class: Label, target: GradTarget) -> Embedded {
        let probs = self.forward_embedded(e).probabilities;
        let gz = DVector::from_vec(target_logit_grad(&probs, class, target));
        let g = self.head.tr_mul(&gz);
        vec![g; e.len()]
    }
}

/// Binary logistic regression `p(y=1|x) = σ(w·x + bias)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.logit(x) > 0.0
    }

    /// Gradient of the logit with respect to `x`: the weight vector.
    pub fn grad_logit(&self) -> &[f64] {
        &self.weights
    }

    pub fn accuracy(&self, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
        let hits = xs.iter().zip(ys).filter(|(x, &y)| self.predict(x) == y).count();
        hits as f64 / ys.len() as f64
    }
}

const LOGREG_MAX_ITER: usize = 100;
const LOGREG_TOL: f64 = 1e-8;

fn log1pexp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Newton's method on mean log-loss plus `(l2/2)·‖w‖²` (bias unpenalized).
pub fn fit_logreg_xy(xs: &[Vec<f64>], ys: &[bool], l2: f64) -> Result<LinearModel> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset("logistic regression needs data"));
    }
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!("{} rows but {} labels", xs.len(), ys.len())));
    }
    if l2 < 0.0 {
        return Err(Error::Range(format!("l2 penalty {l2} is negative")));
    }
    let p = xs[0].len();
    let n = xs.len() as f64;
    // design matrix with a trailing intercept column
    let x = DMatrix::from_fn(xs.len(), p + 1, |i, j| if j < p { xs[i][j] } else { 1.0 });
    let y = DVector::from_iterator(ys.len(), ys.iter().map(|&v| f64::from(u8::from(v))));
    let penalty = DVector::from_fn(p + 1, |j, _| if j < p { l2 } else { 0.0 });

    let objective = |beta: &DVector<f64>| {
        let eta = &x * beta;
        let nll: f64 = eta.iter().zip(y.iter()).map(|(&t, &yi)| log1pexp(t) - yi * t).sum();
        nll / n + 0.5 * beta.component_mul(&penalty).dot(beta)
    };

    let mut beta = DVector::zeros(p + 1);
    let mut f = objective(&beta);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..LOGREG_MAX_ITER {
        let eta = &x * &beta;
        let mu = eta.map(sigmoid);
        let grad = x.tr_mul(&(&mu - &y)) / n + beta.component_mul(&penalty);
        grad_norm = grad.norm();
        if grad_norm < LOGREG_TOL {
            let weights = beta.rows(0, p).iter().copied().collect();
            return Ok(LinearModel { weights, bias: beta[p] });
        }
        let wts = mu.map(|m| m * (1.0 - m) / n);
        let mut hess = x.tr_mul(&DMatrix::from_fn(x.nrows(), p + 1, |i, j| x[(i, j)] * wts[i]));
        for j in 0..=p {
            hess[(j, j)] += penalty[j];
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hess.lu().solve(&grad).ok_or(Error::NoConvergence { iterations: 0, grad_norm })?,
        };
        let slope = grad.dot(&step);
        // Newton decrement below the float resolution of the objective
        if 0.5 * slope <= 4.0 * f64::EPSILON * f.abs().max(1.0) {
            let weights = beta.rows(0, p).iter().copied().collect();
            return Ok(LinearModel { weights, bias: beta[p] });
        }
        // near the optimum the decrease drowns in summation noise; the
        // quadratic model is exact enough to take the full step
        if slope < 1e-10 * f.abs().max(1.0) {
            beta -= &step;
            f = objective(&beta);
            continue;
        }
        let mut t = 1.0;
        loop {
            let cand = &beta - &step * t;
            let fc = objective(&cand);
            if fc <= f - 1e-4 * t * slope || t < 1e-12 {
                beta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::NoConvergence { iterations: LOGREG_MAX_ITER, grad_norm })
}

pub fn fit_logreg(data: &[SyntheticTabularExample], l2: f64) -> Result<LinearModel> {
    let xs: Vec<Vec<f64>> = data.iter().map(|e| e.x.to_vec()).collect();
    let ys: Vec<bool> = data.iter().map(|e| e.y).collect();
    fit_logreg_xy(&xs, &ys, l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, TokenSequence, INFORMATIVE};

    #[test]
    fn linear_token_logit_gradient_is_head_row() {
        let m = LinearTokenModel::new_random(5, 3, 2, &mut crate::rng::seeded(1));
        let seq = TokenSequence::new(vec![1, 4, 2]);
        let g = m.grad_embedded(&m.embed(&seq).unwrap(), 1, GradTarget::Logit);
        for gi in g {
            assert_eq!(gi, m.head.row(1).transpose());
        }
    }

    #[test]
    fn separable_one_dimensional_data() {
        let xs = vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]];
        let ys = vec![false, false, true, true];
        let m = fit_logreg_xy(&xs, &ys, 0.01).unwrap();
        assert!(m.weights[0].is_finite() && m.weights[0] > 0.0);
        assert!(matches!(fit_logreg_xy(&xs, &ys, -1.0), Err(Error::Range(_))));
    }

    #[test]
    fn informative_weights_dominate() {
        let data = gen_synthetic(4096, 0).unwrap();
        let m = fit_logreg(&data, 1e-4).unwrap();
        let min_inf = m.weights[..INFORMATIVE].iter().map(|w| w.abs()).fold(f64::INFINITY, f64::min);
        let max_noise = m.weights[INFORMATIVE..].iter().map(|w| w.abs()).fold(0.0, f64::max);
        assert!(min_inf > max_noise, "{:?}", m.weights);
    }

    #[test]
    fn duplicated_data_same_solution() {
        let data = gen_synthetic(300, 2).unwrap();
        let doubled: Vec<_> = data.iter().chain(&data).cloned().collect();
        let a = fit_logreg(&data, 1e-3).unwrap();
        let b = fit_logreg(&doubled, 1e-3).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
