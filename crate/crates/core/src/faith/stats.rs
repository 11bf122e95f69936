use crate::{Error, Result};
use statrs::distribution::{ContinuousCDF, Normal};

/// Bias-corrected and accelerated bootstrap interval for the mean.
pub fn bca_interval<R: rand::Rng + ?Sized>(
    samples: &[f64],
    confidence: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("bootstrap needs samples"));
    }
    if !(confidence > 0.0 && confidence < 1.0) || resamples == 0 {
        return Err(Error::Range("confidence must be in (0, 1) with positive resamples".into()));
    }
    let n = samples.len();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let theta = mean(samples);
    if samples.iter().all(|&x| x == samples[0]) || n == 1 {
        return Ok((theta, theta));
    }
    let mut boot: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    boot.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let below = boot.iter().filter(|&&b| b < theta).count() as f64 / resamples as f64;
    let z0 = normal.inverse_cdf(below.clamp(1.0 / (2.0 * resamples as f64), 1.0 - 1.0 / (2.0 * resamples as f64)));
    let jack: Vec<f64> = (0..n)
        .map(|i| samples.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, x)| x).sum::<f64>() / (n - 1) as f64)
        .collect();
    let jm = mean(&jack);
    let num: f64 = jack.iter().map(|j| (jm - j).powi(3)).sum();
    let den: f64 = jack.iter().map(|j| (jm - j).powi(2)).sum::<f64>().powf(1.5);
    let accel = if den > 0.0 { num / (6.0 * den) } else { 0.0 };
    let alpha = (1.0 - confidence) / 2.0;
    let adjusted = |q: f64| {
        let zq = normal.inverse_cdf(q);
        normal.cdf(z0 + (z0 + zq) / (1.0 - accel * (z0 + zq)))
    };
    let pick = |q: f64| {
        let idx = ((q * resamples as f64).floor() as usize).min(resamples - 1);
        boot[idx]
    };
    Ok((pick(adjusted(alpha)), pick(adjusted(1.0 - alpha))))
}
