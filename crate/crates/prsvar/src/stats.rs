//! Empirical-distribution diagnostics for comparing replication batches
//! against their analytic Gaussian limits.

use serde::{Deserialize, Serialize};

use crate::asymptotics::normal_cdf;
use crate::error::{Error, Result};

/// Minimum sample size for a meaningful KS statistic.
const KS_MIN_SAMPLE: usize = 20;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    /// Against Φ directly — checks location and scale from the theorems.
    StandardNormal,
    /// Against N(mean, sd) estimated from the sample — shape only. Never
    /// silently substituted for the standard-normal comparison.
    FittedNormal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KsReport {
    /// sup-distance D ∈ [0, 1].
    pub statistic: f64,
    pub sample_size: usize,
    pub comparator: Comparator,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass_threshold: Option<f64>,
}

/// Kolmogorov–Smirnov sup-distance of a standardized sample against Φ:
/// D = max_i max{i/R − Φ(x_(i)), Φ(x_(i)) − (i−1)/R}.
pub fn ks_to_standard_normal(standardized: &[f64]) -> Result<KsReport> {
    let sorted = checked_sorted(standardized)?;
    let r = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let phi = normal_cdf(x);
        d = d
            .max((i as f64 + 1.0) / r - phi)
            .max(phi - i as f64 / r);
    }
    Ok(KsReport {
        statistic: d,
        sample_size: sorted.len(),
        comparator: Comparator::StandardNormal,
        pass_threshold: None,
    })
}

/// KS against a normal fitted to the sample's mean and standard deviation.
pub fn ks_to_fitted_normal(sample: &[f64]) -> Result<KsReport> {
    let sorted = checked_sorted(sample)?;
    let r = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / r;
    let var = sorted.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (r - 1.0);
    if var <= 0.0 {
        return Err(Error::Data("constant sample has no fitted normal".into()));
    }
    let sd = var.sqrt();
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let phi = normal_cdf((x - mean) / sd);
        d = d
            .max((i as f64 + 1.0) / r - phi)
            .max(phi - i as f64 / r);
    }
    Ok(KsReport {
        statistic: d,
        sample_size: sorted.len(),
        comparator: Comparator::FittedNormal,
        pass_threshold: None,
    })
}

fn checked_sorted(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.len() < KS_MIN_SAMPLE {
        return Err(Error::Data(format!(
            "KS needs at least {KS_MIN_SAMPLE} observations, got {}",
            sample.len()
        )));
    }
    if sample.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("sample contains NaN".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted)
}

/// Intervals to score coverage against: one per observation or a single
/// fixed interval.
#[derive(Debug, Clone)]
pub enum Intervals<'a> {
    Fixed((f64, f64)),
    PerReplication(&'a [(f64, f64)]),
}

/// Fraction of raw values inside their intervals.
pub fn coverage(raw: &[f64], intervals: Intervals<'_>) -> Result<f64> {
    if raw.is_empty() {
        return Err(Error::Data("empty sample".into()));
    }
    let inside = |x: f64, (lo, hi): (f64, f64)| x >= lo && x <= hi;
    let hits = match intervals {
        Intervals::Fixed(iv) => raw.iter().filter(|&&x| inside(x, iv)).count(),
        Intervals::PerReplication(ivs) => {
            if ivs.len() != raw.len() {
                return Err(Error::Data(format!(
                    "{} intervals for {} observations",
                    ivs.len(),
                    raw.len()
                )));
            }
            raw.iter()
                .zip(ivs.iter())
                .filter(|(&x, &iv)| inside(x, iv))
                .count()
        }
    };
    Ok(hits as f64 / raw.len() as f64)
}

/// Sample variance (unbiased) divided by the analytic variance.
pub fn variance_ratio(raw: &[f64], analytic_sd: f64) -> Result<f64> {
    if raw.len() < 2 {
        return Err(Error::Data("variance ratio needs at least 2 observations".into()));
    }
    if analytic_sd <= 0.0 {
        return Err(Error::InvalidArgument("analytic_sd must be positive".into()));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok(var / (analytic_sd * analytic_sd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::normal_quantile;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn ks_on_exact_quantile_grid() {
        // Quantiles at levels (i−0.5)/R leave D = 0.5/R exactly.
        let r = 100;
        let xs: Vec<f64> = (1..=r)
            .map(|i| normal_quantile((i as f64 - 0.5) / r as f64))
            .collect();
        let rep = ks_to_standard_normal(&xs).unwrap();
        assert_relative_eq!(rep.statistic, 0.005, epsilon = 1e-9);
    }

    #[test]
    fn ks_constant_sample() {
        let xs = vec![0.0; 50];
        let rep = ks_to_standard_normal(&xs).unwrap();
        assert!(rep.statistic >= 0.5);
        // Fitted comparator cannot be built from a constant sample.
        assert!(ks_to_fitted_normal(&xs).is_err());
    }

    #[test]
    fn ks_true_normal_sample_is_small() {
        let r = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        let rep = ks_to_standard_normal(&xs).unwrap();
        // 99.9% KS quantile ≈ 1.95/√R.
        assert!(rep.statistic < 1.95 / (r as f64).sqrt());
    }

    #[test]
    fn ks_rejects_nan_and_short_samples() {
        assert!(ks_to_standard_normal(&[0.0; 5]).is_err());
        let mut xs = vec![0.0; 30];
        xs[3] = f64::NAN;
        assert!(ks_to_standard_normal(&xs).is_err());
    }

    #[test]
    fn ks_fitted_ignores_location_scale() {
        let r = 200;
        let xs: Vec<f64> = (1..=r)
            .map(|i| 5.0 + 3.0 * normal_quantile((i as f64 - 0.5) / r as f64))
            .collect();
        let rep = ks_to_fitted_normal(&xs).unwrap();
        assert!(rep.statistic < 0.02);
        // The standard-normal comparator sees the shift.
        let rep2 = ks_to_standard_normal(&xs).unwrap();
        assert!(rep2.statistic > 0.5);
    }

    #[test]
    fn coverage_trivial_cases() {
        let raw = vec![0.0, 0.5, 1.0];
        assert_eq!(coverage(&raw, Intervals::Fixed((-1.0, 2.0))).unwrap(), 1.0);
        assert_eq!(coverage(&raw, Intervals::Fixed((5.0, 6.0))).unwrap(), 0.0);
        let ivs = vec![(-1.0, 0.1), (0.4, 0.6), (2.0, 3.0)];
        assert_relative_eq!(
            coverage(&raw, Intervals::PerReplication(&ivs)).unwrap(),
            2.0 / 3.0
        );
        let short = vec![(0.0, 1.0)];
        assert!(coverage(&raw, Intervals::PerReplication(&short)).is_err());
    }

    #[test]
    fn coverage_gaussian_oracle() {
        // 95% oracle intervals around N(0,1) draws: coverage near 0.95
        // (binomial sd ≈ 0.0049 at R = 2000).
        let r = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let raw: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        let z = normal_quantile(0.975);
        let cov = coverage(&raw, Intervals::Fixed((-z, z))).unwrap();
        assert!((0.94..=0.96).contains(&cov), "coverage {cov}");
    }

    #[test]
    fn variance_ratio_oracle_and_scaling() {
        let r = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let raw: Vec<f64> = (0..r).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let ratio = variance_ratio(&raw, 2.0).unwrap();
        assert!((ratio - 1.0).abs() < 4.0 * (2.0 / r as f64).sqrt());

        let doubled: Vec<f64> = raw.iter().map(|&x| 2.0 * x).collect();
        let ratio2 = variance_ratio(&doubled, 2.0).unwrap();
        assert_relative_eq!(ratio2, 4.0 * ratio, epsilon = 1e-12);

        let constant = vec![1.0; 10];
        assert_eq!(variance_ratio(&constant, 1.0).unwrap(), 0.0);
        assert!(variance_ratio(&raw, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn ks_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
            let base = ks_to_standard_normal(&xs).unwrap().statistic;
            let mut shuffled = xs.clone();
            shuffled.reverse();
            shuffled.swap(0, 10);
            let perm = ks_to_standard_normal(&shuffled).unwrap().statistic;
            prop_assert_eq!(base, perm);
        }
    }
}
