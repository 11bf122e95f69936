//! Local surrogate fit: L1-penalised logistic regression on soft labels over
//! a masking neighbourhood.

use super::{Explanation, ScoreKind};
use crate::data::{mask_tokens, Label, TokenSequence};
use crate::model::Classifier;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

const GAP_TOL: f64 = 1e-8;
const MAX_OUTER: usize = 500;
const MAX_SWEEPS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct L1Logistic {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    /// Duality gap (λ > 0) or gradient ∞-norm (λ = 0) at termination.
    pub certificate: f64,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn log1pexp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn xlogx(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Minimises `(1/n) Σ [log(1+e^η) − y η] + λ‖w‖₁` with `η = β₀ + z·w`, for
/// soft labels `y ∈ [0,1]`, by proximal Newton with a coordinate-descent
/// inner solver.
pub fn fit_l1_logistic(z: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<L1Logistic> {
    let (n, p) = (z.nrows(), z.ncols());
    if n == 0 {
        return Err(Error::EmptyDataset("surrogate fit needs samples"));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} labels", y.len())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Range(format!("lambda {lambda} must be finite and nonnegative")));
    }
    let nf = n as f64;
    // design with the intercept in the last column
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j < p { z[(i, j)] } else { 1.0 });
    let y = DVector::from_column_slice(y);
    let penalised = |j: usize| j < p;

    let objective = |beta: &DVector<f64>| {
        let eta = &x * beta;
        let loss: f64 = eta.iter().zip(y.iter()).map(|(&t, &yi)| log1pexp(t) - yi * t).sum::<f64>() / nf;
        loss + lambda * beta.rows(0, p).iter().map(|b| b.abs()).sum::<f64>()
    };

    let mut beta = DVector::zeros(p + 1);
    // start the intercept at the logit of the mean label
    let ybar = (y.sum() / nf).clamp(1e-12, 1.0 - 1e-12);
    beta[p] = (ybar / (1.0 - ybar)).ln();
    let mut f = objective(&beta);
    let mut certificate = f64::INFINITY;

    for outer in 0..MAX_OUTER {
        let eta = &x * &beta;
        let mu = eta.map(sigmoid);
        let s = &mu - &y;
        let grad = x.tr_mul(&s) / nf;

        certificate = if lambda > 0.0 { duality_gap(&x, &y, &s, f, lambda, p) } else { grad.amax() };
        if certificate <= GAP_TOL {
            return Ok(L1Logistic {
                weights: beta.rows(0, p).iter().copied().collect(),
                intercept: beta[p],
                iterations: outer,
                certificate,
            });
        }

        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12) / nf);
        let xw = DMatrix::from_fn(n, p + 1, |i, j| x[(i, j)] * w[i]);
        let hess = x.tr_mul(&xw);

        // coordinate descent on the penalised quadratic model
        let mut delta = DVector::zeros(p + 1);
        let mut hd = DVector::zeros(p + 1);
        for _ in 0..MAX_SWEEPS {
            let mut max_change: f64 = 0.0;
            for j in 0..=p {
                let hjj = hess[(j, j)];
                if hjj <= 0.0 {
                    continue;
                }
                let c = grad[j] + hd[j] - hjj * delta[j];
                let target =
                    if penalised(j) { soft_threshold(beta[j] - c / hjj, lambda / hjj) } else { beta[j] - c / hjj };
                let new_delta = target - beta[j];
                let change = new_delta - delta[j];
                if change != 0.0 {
                    hd.axpy(change, &hess.column(j), 1.0);
                    delta[j] = new_delta;
                    max_change = max_change.max(change.abs());
                }
            }
            if max_change < 1e-14 {
                break;
            }
        }

        let l1 = |b: &DVector<f64>| b.rows(0, p).iter().map(|v| v.abs()).sum::<f64>();
        let decrease = grad.dot(&delta) + lambda * (l1(&(&beta + &delta)) - l1(&beta));
        let mut t = 1.0;
        loop {
            let cand = &beta + &delta * t;
            let fc = objective(&cand);
            if fc <= f + 0.25 * t * decrease || t < 1e-10 {
                beta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::NoConvergence { iterations: MAX_OUTER, grad_norm: certificate })
}

/// Gap between the primal value and the dual value at a feasible point
/// built from the current residual `s = σ(η) − y`.
fn duality_gap(x: &DMatrix<f64>, y: &DVector<f64>, s: &DVector<f64>, primal: f64, lambda: f64, p: usize) -> f64 {
    let n = s.len() as f64;
    let centered = s.add_scalar(-s.mean());
    let corr = x.columns(0, p).tr_mul(&centered).amax() / n;
    let scale = if corr > lambda { lambda / corr } else { 1.0 };
    let mut dual = 0.0;
    for (yi, si) in y.iter().zip(centered.iter()) {
        let t = yi + scale * si;
        if !(0.0..=1.0).contains(&t) {
            return f64::INFINITY;
        }
        dual -= xlogx(t) + xlogx(1.0 - t);
    }
    primal - dual / n
}

/// LIME with masking perturbations and soft labels `p(class | x̃)`.
///
/// The first neighbour is the unperturbed input; each further neighbour
/// masks every unmasked token with a ratio drawn uniformly per neighbour.
/// Positions already masked in `seq` score 0.
pub fn explain_lime<C: Classifier + ?Sized, R: rand::Rng + ?Sized>(
    model: &C,
    seq: &TokenSequence,
    class: Label,
    n_samples: usize,
    lambda: f64,
    rng: &mut R,
) -> Result<Explanation> {
    model.check_class(class)?;
    if n_samples < seq.len() {
        return Err(Error::Config(format!("LIME needs at least {} samples, got {n_samples}", seq.len())));
    }
    let free: Vec<usize> = seq.unmasked_positions().collect();
    let mut z = DMatrix::zeros(n_samples, free.len());
    let mut y = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let neighbour = if s == 0 {
            seq.clone()
        } else {
            let r: f64 = rng.random();
            mask_tokens(seq, r, rng)?
        };
        for (j, &pos) in free.iter().enumerate() {
            z[(s, j)] = f64::from(u8::from(!neighbour.is_masked(pos)));
        }
        y.push(model.forward(&neighbour)?.probabilities[class]);
    }
    let mut scores = vec![0.0; seq.len()];
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if free.is_empty() || hi - lo < 1e-12 {
        let mut e = Explanation::new(scores, ScoreKind::Signed, "lime");
        e.degenerate = true;
        return Ok(e);
    }
    let fit = fit_l1_logistic(&z, &y, lambda)?;
    for (j, &pos) in free.iter().enumerate() {
        scores[pos] = fit.weights[j];
    }
    Ok(Explanation::new(scores, ScoreKind::Signed, "lime"))
}
