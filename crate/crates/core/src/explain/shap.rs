//! Kernel SHAP on logits, with masking as the feature-removal operator.

use super::{Explanation, ScoreKind};
use crate::data::{Label, TokenSequence};
use crate::model::Classifier;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

/// Largest feature count accepted by exact enumeration.
pub const MAX_EXACT_FEATURES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapMode {
    /// All `2^M − 2` proper coalitions weighted by the Shapley kernel.
    Exact,
    /// `n` coalitions drawn from the kernel, equally weighted.
    Sampled(usize),
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel `π(z) = (M−1) / (C(M,|z|)·|z|·(M−|z|))` for `0 < |z| < M`.
pub fn shap_kernel(m: usize, size: usize) -> f64 {
    assert!(size > 0 && size < m, "kernel defined for proper nonempty coalitions");
    (m - 1) as f64 / (binomial(m, size) * size as f64 * (m - size) as f64)
}

pub fn explain_kernel_shap<C: Classifier + ?Sized, R: rand::Rng + ?Sized>(
    model: &C,
    seq: &TokenSequence,
    class: Label,
    mode: ShapMode,
    rng: &mut R,
) -> Result<Explanation> {
    model.check_class(class)?;
    let free: Vec<usize> = seq.unmasked_positions().collect();
    let m = free.len();
    if mode == ShapMode::Exact && m > MAX_EXACT_FEATURES {
        return Err(Error::Capacity(format!(
            "exact Kernel SHAP enumerates 2^{m} coalitions; use sampled mode above {MAX_EXACT_FEATURES} features"
        )));
    }
    let full = model.embed(seq)?;
    let mask = model.mask_embedding();
    let value = |coalition: &[bool]| {
        let mut e = full.clone();
        for (j, &pos) in free.iter().enumerate() {
            if !coalition[j] {
                e[pos] = mask.clone();
            }
        }
        model.forward_embedded(&e).logits[class]
    };

    let mut scores = vec![0.0; seq.len()];
    if m == 0 {
        return Ok(Explanation::new(scores, ScoreKind::Signed, "kernel-shap"));
    }
    let v_empty = value(&vec![false; m]);
    let v_full = value(&vec![true; m]);
    let total = v_full - v_empty;
    if m == 1 {
        scores[free[0]] = total;
        return Ok(Explanation::new(scores, ScoreKind::Signed, "kernel-shap"));
    }

    let mut coalitions: Vec<(Vec<bool>, f64)> = Vec::new();
    match mode {
        ShapMode::Exact => {
            for bits in 1..(1u64 << m) - 1 {
                let z: Vec<bool> = (0..m).map(|j| bits >> j & 1 == 1).collect();
                let size = bits.count_ones() as usize;
                coalitions.push((z, shap_kernel(m, size)));
            }
        }
        ShapMode::Sampled(n) => {
            if n == 0 {
                return Err(Error::Config("sampled Kernel SHAP needs n >= 1".into()));
            }
            let size_weights: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
            let dist = rand::distr::weighted::WeightedIndex::new(&size_weights).expect("positive size weights");
            for _ in 0..n {
                let size = rng.sample(&dist) + 1;
                let mut z = vec![false; m];
                for j in sample(rng, m, size) {
                    z[j] = true;
                }
                coalitions.push((z, 1.0));
            }
        }
    }

    // eliminate φ_M through Σφ = total: y − z_M·total = Σ_{j<M} (z_j − z_M) φ_j
    let k = m - 1;
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut atb = DVector::<f64>::zeros(k);
    for (z, w) in &coalitions {
        let zm = f64::from(u8::from(z[k]));
        let target = value(z) - v_empty - zm * total;
        let row: Vec<f64> = (0..k).map(|j| f64::from(u8::from(z[j])) - zm).collect();
        for a in 0..k {
            if row[a] == 0.0 {
                continue;
            }
            atb[a] += w * row[a] * target;
            for b in 0..k {
                ata[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    let phi = match ata.clone().cholesky() {
        Some(ch) => ch.solve(&atb),
        None => ata
            .svd(true, true)
            .solve(&atb, 1e-12)
            .map_err(|e| Error::Unsupported(format!("Kernel SHAP system is singular: {e}")))?,
    };
    for j in 0..k {
        scores[free[j]] = phi[j];
    }
    scores[free[k]] = total - phi.sum();
    Ok(Explanation::new(scores, ScoreKind::Signed, "kernel-shap"))
}
