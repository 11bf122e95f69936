//! Tabular generator `x = a·z/10 + d·η + ε/10`, `y = [z > 0]`.

use crate::{Error, Result};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const FEATURE_DIM: usize = 16;
/// Number of leading features of `a` that are nonzero.
pub const INFORMATIVE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTabularExample {
    pub x: [f64; FEATURE_DIM],
    pub y: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

/// The dataset-level vectors `a` and `d`, sampled once.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticGenerator {
    pub a: [f64; FEATURE_DIM],
    pub d: [f64; FEATURE_DIM],
}

impl SyntheticGenerator {
    pub fn sample<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        let mut a = [0.0; FEATURE_DIM];
        let mut d = [0.0; FEATURE_DIM];
        for v in a.iter_mut().take(INFORMATIVE) {
            *v = rng.sample(StandardNormal);
        }
        for v in d.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        SyntheticGenerator { a, d }
    }

    /// Builds one example from explicit latent draws.
    pub fn example(&self, z: f64, eta: f64, eps: &[f64; FEATURE_DIM]) -> SyntheticTabularExample {
        let mut x = [0.0; FEATURE_DIM];
        for j in 0..FEATURE_DIM {
            x[j] = self.a[j] * z / 10.0 + self.d[j] * eta + eps[j] / 10.0;
        }
        SyntheticTabularExample { x, y: z > 0.0, z: Some(z) }
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> SyntheticTabularExample {
        let z: f64 = rng.sample(StandardNormal);
        let eta: f64 = rng.sample(StandardNormal);
        let mut eps = [0.0; FEATURE_DIM];
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        self.example(z, eta, &eps)
    }
}

pub fn gen_synthetic(n: usize, seed: u64) -> Result<Vec<SyntheticTabularExample>> {
    if n == 0 {
        return Err(Error::EmptyDataset("synthetic dataset needs n >= 1"));
    }
    let mut rng = crate::rng::seeded(seed);
    let generator = SyntheticGenerator::sample(&mut rng);
    Ok((0..n).map(|_| generator.draw(&mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_first_four_entries_of_a_are_informative() {
        let g = SyntheticGenerator::sample(&mut crate::rng::seeded(3));
        assert!(g.a[..INFORMATIVE].iter().all(|&v| v != 0.0));
        assert!(g.a[INFORMATIVE..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_noise_gives_scaled_a() {
        let g = SyntheticGenerator::sample(&mut crate::rng::seeded(5));
        let ex = g.example(1.0, 0.0, &[0.0; FEATURE_DIM]);
        assert!(ex.y);
        for j in 0..FEATURE_DIM {
            assert_eq!(ex.x[j], g.a[j] / 10.0);
        }
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(gen_synthetic(0, 1), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn label_balance() {
        let data = gen_synthetic(10_000, 11).unwrap();
        let pos = data.iter().filter(|e| e.y).count() as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&pos), "{pos}");
    }
}
