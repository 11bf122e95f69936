//! Max-Simes-Fisher in-distribution testing from internal embeddings.
//!
//! Per observation the embeddings are max-pooled over tokens for every
//! (layer, unit), turned into two-sided empirical p-values, combined across
//! units with Simes' method, turned into two-sided p-values again, and
//! combined across layers with Fisher's method. The final statistic is
//! compared against its own calibration distribution.

use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// `embeddings[layer][token][unit]`, as exposed by the models.
pub type LayerEmbeddings = Vec<Vec<Vec<f64>>>;

pub const CALIBRATION_FORMAT: &str = "faithkit-masf";
pub const CALIBRATION_VERSION: u32 = 1;
/// Below this calibration size p-value resolution is coarse and a warning is logged.
pub const MIN_CALIBRATION: usize = 100;

/// Sorted calibration sample of one statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    values: Vec<f64>,
}

impl CdfTable {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDataset("empirical CDF needs at least one sample"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Range("NaN in empirical CDF sample".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(CdfTable { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fraction of samples strictly below `z`.
    pub fn prob(&self, z: f64) -> f64 {
        self.values.partition_point(|&v| v < z) as f64 / self.values.len() as f64
    }
}

pub fn ecdf_prob(table: &CdfTable, z: f64) -> f64 {
    table.prob(z)
}

pub fn two_sided(p: f64) -> f64 {
    p.min(1.0 - p)
}

/// `min_i q_(i) · N / i` over the ascending-sorted p-values.
pub fn simes(ps: &[f64]) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::EmptyDataset("Simes aggregation needs at least one p-value"));
    }
    let mut q = ps.to_vec();
    q.sort_by(f64::total_cmp);
    let n = q.len() as f64;
    Ok(q.iter().enumerate().map(|(i, &qi)| qi * n / (i + 1) as f64).fold(f64::INFINITY, f64::min))
}

/// `−2 Σ log p_i`.
pub fn fisher(ps: &[f64]) -> f64 {
    -2.0 * ps.iter().map(|p| p.ln()).sum::<f64>()
}

/// Fisher's statistic with p-values floored at `floor`.
pub fn fisher_clamped(ps: &[f64], floor: f64) -> f64 {
    -2.0 * ps.iter().map(|p| p.max(floor).ln()).sum::<f64>()
}

pub fn dataset_pvalue(ps: &[f64]) -> Result<f64> {
    simes(ps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasfCalibration {
    pub format: String,
    pub version: u32,
    pub layers: usize,
    pub units: usize,
    /// `max_tables[layer][unit]`.
    pub max_tables: Vec<Vec<CdfTable>>,
    pub simes_tables: Vec<CdfTable>,
    pub fisher_table: CdfTable,
}

fn dims(obs: &LayerEmbeddings) -> Result<(usize, usize)> {
    let layers = obs.len();
    let first = obs.first().ok_or_else(|| Error::Dimension("observation has no layers".into()))?;
    let units = first.first().map(Vec::len).ok_or_else(|| Error::Dimension("observation has no tokens".into()))?;
    for layer in obs {
        if layer.is_empty() || layer.iter().any(|t| t.len() != units) {
            return Err(Error::Dimension("inconsistent token or unit counts".into()));
        }
    }
    Ok((layers, units))
}

fn max_pool(obs: &LayerEmbeddings, units: usize) -> Vec<Vec<f64>> {
    obs.iter()
        .map(|layer| (0..units).map(|h| layer.iter().map(|tok| tok[h]).fold(f64::NEG_INFINITY, f64::max)).collect())
        .collect()
}

impl MasfCalibration {
    fn floor(&self) -> f64 {
        1.0 / (2.0 * self.fisher_table.len() as f64)
    }

    fn layer_stat(&self, l: usize, maxes: &[f64]) -> Result<f64> {
        let ps: Vec<f64> = maxes.iter().zip(&self.max_tables[l]).map(|(&z, t)| two_sided(t.prob(z))).collect();
        simes(&ps)
    }

    fn fisher_stat(&self, obs: &LayerEmbeddings) -> Result<f64> {
        let (layers, units) = dims(obs)?;
        if layers != self.layers || units != self.units {
            return Err(Error::Dimension(format!(
                "observation is {layers}x{units}, calibration is {}x{}",
                self.layers, self.units
            )));
        }
        let maxes = max_pool(obs, units);
        let p2 = (0..layers)
            .map(|l| Ok(two_sided(self.simes_tables[l].prob(self.layer_stat(l, &maxes[l])?))))
            .collect::<Result<Vec<_>>>()?;
        Ok(fisher_clamped(&p2, self.floor()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer(std::io::BufWriter::new(std::fs::File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cal: MasfCalibration = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if cal.format != CALIBRATION_FORMAT || cal.version != CALIBRATION_VERSION {
            return Err(Error::Format(format!("unsupported calibration {} v{}", cal.format, cal.version)));
        }
        Ok(cal)
    }
}

/// Builds every CDF level by running the pipeline over the calibration set.
pub fn masf_calibrate(observations: &[LayerEmbeddings]) -> Result<MasfCalibration> {
    let first = observations.first().ok_or(Error::EmptyDataset("MaSF calibration set is empty"))?;
    let (layers, units) = dims(first)?;
    if observations.len() < MIN_CALIBRATION {
        log::warn!(
            "MaSF calibrated on {} observations; p-value resolution is 1/{}",
            observations.len(),
            observations.len()
        );
    }
    let maxes = observations
        .iter()
        .map(|o| {
            let d = dims(o)?;
            if d != (layers, units) {
                return Err(Error::Dimension(format!("observation is {}x{}, expected {layers}x{units}", d.0, d.1)));
            }
            Ok(max_pool(o, units))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_tables = (0..layers)
        .map(|l| (0..units).map(|h| CdfTable::new(maxes.iter().map(|m| m[l][h]).collect())).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let n = observations.len();
    let mut cal = MasfCalibration {
        format: CALIBRATION_FORMAT.into(),
        version: CALIBRATION_VERSION,
        layers,
        units,
        max_tables,
        simes_tables: Vec::new(),
        fisher_table: CdfTable { values: vec![0.0; n] },
    };
    let simes_stats = maxes
        .iter()
        .map(|m| (0..layers).map(|l| cal.layer_stat(l, &m[l])).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    cal.simes_tables =
        (0..layers).map(|l| CdfTable::new(simes_stats.iter().map(|s| s[l]).collect())).collect::<Result<_>>()?;
    let fisher_stats = observations.iter().map(|o| cal.fisher_stat(o)).collect::<Result<Vec<_>>>()?;
    cal.fisher_table = CdfTable::new(fisher_stats)?;
    Ok(cal)
}

/// Upper-tail p-value of one observation's Fisher statistic.
pub fn masf_pvalue(cal: &MasfCalibration, observation: &LayerEmbeddings) -> Result<f64> {
    Ok(1.0 - cal.fisher_table.prob(cal.fisher_stat(observation)?))
}

pub fn masf_pvalues(cal: &MasfCalibration, observations: &[LayerEmbeddings]) -> Result<Vec<f64>> {
    observations.par_iter().map(|o| masf_pvalue(cal, o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ecdf_examples() {
        let t = CdfTable::new(vec![4.0, 2.0, 3.0, 1.0]).unwrap();
        assert_eq!(t.prob(0.0), 0.0);
        assert_eq!(t.prob(9.0), 1.0);
        assert_eq!(t.prob(2.5), 0.5);
        assert_eq!(t.prob(2.0), 0.25);
        assert!(CdfTable::new(vec![]).is_err());
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(two_sided(0.0), 0.0);
        assert_eq!(two_sided(0.5), 0.5);
        assert!((two_sided(0.9) - 0.1).abs() < 1e-15);
        assert_eq!(simes(&[1.0, 1.0]).unwrap(), 1.0);
        assert!((simes(&[0.01, 0.04, 0.9]).unwrap() - 0.03).abs() < 1e-15);
        assert_eq!(simes(&[0.3]).unwrap(), 0.3);
        assert!(simes(&[]).is_err());
        assert_eq!(fisher(&[1.0, 1.0]), 0.0);
        assert!((fisher(&[(-1.0f64).exp()]) - 2.0).abs() < 1e-15);
        assert!((fisher(&[0.5, 0.5]) - 2.772588722239781).abs() < 1e-12);
        assert_eq!(dataset_pvalue(&[1.0; 4]).unwrap(), 1.0);
        assert!((dataset_pvalue(&[0.001; 10]).unwrap() - 0.001).abs() < 1e-15);
    }

    fn gaussian_obs(rng: &mut crate::rng::Rng, layers: usize, tokens: usize, units: usize) -> LayerEmbeddings {
        (0..layers)
            .map(|_| (0..tokens).map(|_| (0..units).map(|_| StandardNormal.sample(rng)).collect()).collect())
            .collect()
    }

    #[test]
    fn calibration_tables_have_n_samples() {
        let mut rng = crate::rng::seeded(0);
        let obs: Vec<_> = (0..50).map(|i| gaussian_obs(&mut rng, 2, 3 + i % 4, 4)).collect();
        let cal = masf_calibrate(&obs).unwrap();
        assert!(cal.max_tables.iter().flatten().all(|t| t.len() == 50));
        assert!(cal.simes_tables.iter().all(|t| t.len() == 50));
        assert_eq!(cal.fisher_table.len(), 50);
        let p = masf_pvalue(&cal, &obs[3]).unwrap();
        assert_eq!(p, masf_pvalue(&cal, &obs[3]).unwrap());
        assert!(masf_pvalue(&cal, &gaussian_obs(&mut rng, 3, 3, 4)).is_err());
    }

    #[test]
    fn constant_embeddings_constant_fisher() {
        let obs = vec![vec![vec![vec![1.0, 2.0]; 3]; 2]; 20];
        let cal = masf_calibrate(&obs).unwrap();
        let v = cal.fisher_table.values();
        assert!(v.iter().all(|&x| x == v[0]));
    }

    #[test]
    fn round_trip() {
        let mut rng = crate::rng::seeded(1);
        let obs: Vec<_> = (0..10).map(|_| gaussian_obs(&mut rng, 1, 2, 2)).collect();
        let cal = masf_calibrate(&obs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.json");
        cal.save(&path).unwrap();
        assert_eq!(MasfCalibration::load(&path).unwrap(), cal);
    }

    proptest! {
        #[test]
        fn ecdf_monotone(mut xs in prop::collection::vec(-10.0f64..10.0, 1..30), a in -12.0f64..12.0, b in -12.0f64..12.0) {
            let t = CdfTable::new(std::mem::take(&mut xs)).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(t.prob(lo) <= t.prob(hi));
        }

        #[test]
        fn simes_bounds(ps in prop::collection::vec(0.0f64..=1.0, 1..30)) {
            let s = simes(&ps).unwrap();
            let min = ps.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(s >= min - 1e-15);
            prop_assert!(s <= ps.len() as f64 * min + 1e-15);
        }

        #[test]
        fn fisher_permutation_and_concatenation(
            a in prop::collection::vec(1e-6f64..=1.0, 1..10),
            b in prop::collection::vec(1e-6f64..=1.0, 1..10),
        ) {
            let mut rev = a.clone();
            rev.reverse();
            prop_assert!((fisher(&a) - fisher(&rev)).abs() < 1e-9);
            let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
            prop_assert!((fisher(&joined) - fisher(&a) - fisher(&b)).abs() < 1e-9);
        }
    }
}
