use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CIResult {
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub n_resamples: usize,
    pub level: f64,
}

/// Mean computed relative to the first element, so constant data is reproduced
/// exactly.
fn shifted_mean(xs: impl Iterator<Item = f64> + Clone, first: f64, n: usize) -> f64 {
    first + xs.map(|x| x - first).sum::<f64>() / n as f64
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Percentile bootstrap CI of the mean paired difference. The p-value is
/// `2·min(P(mean* ≤ 0), P(mean* ≥ 0))`, capped at 1.
pub fn bootstrap_ci(diffs: &[f64], n_resamples: usize, level: f64, seed: u64) -> Result<CIResult> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::Param(format!("bootstrap needs at least 2 samples, got {n}")));
    }
    if n_resamples == 0 {
        return Err(Error::Param("n_resamples must be > 0".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Param(format!("confidence level {level} outside (0, 1)")));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite { name: "paired differences".into() });
    }
    let first = diffs[0];
    let mean_diff = shifted_mean(diffs.iter().copied(), first, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(n_resamples);
    let mut idx = vec![0usize; n];
    for _ in 0..n_resamples {
        idx.iter_mut().for_each(|i| *i = rng.gen_range(0..n));
        means.push(shifted_mean(idx.iter().map(|&i| diffs[i]), first, n));
    }
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let le = means.iter().filter(|&&m| m <= 0.0).count() as f64 / n_resamples as f64;
    let ge = means.iter().filter(|&&m| m >= 0.0).count() as f64 / n_resamples as f64;
    Ok(CIResult {
        mean_diff,
        ci_low: quantile(&means, alpha),
        ci_high: quantile(&means, 1.0 - alpha),
        p_value: (2.0 * le.min(ge)).min(1.0),
        n_resamples,
        level,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided one-sample t-test of paired differences against zero. Zero variance
/// gives `p = 1` when the mean is zero and `p = 0` otherwise.
pub fn paired_t(diffs: &[f64]) -> Result<TTestResult> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::Param(format!("paired t-test needs at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = shifted_mean(diffs.iter().copied(), diffs[0], n);
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let df = nf - 1.0;
    if var == 0.0 {
        let (t, p_value) = if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) };
        return Ok(TTestResult { t, df, p_value });
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Param(e.to_string()))?;
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTestResult { t, df, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_diffs() {
        let d = vec![0.13; 40];
        let r = bootstrap_ci(&d, 1000, 0.95, 1).unwrap();
        assert_eq!((r.mean_diff, r.ci_low, r.ci_high), (0.13, 0.13, 0.13));
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn symmetric_diffs_contain_zero() {
        let d: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let r = bootstrap_ci(&d, 1000, 0.95, 42).unwrap();
        assert!(r.ci_low <= 0.0 && 0.0 <= r.ci_high, "{r:?}");
        assert!(r.p_value > 0.05);
        assert_eq!(r, bootstrap_ci(&d, 1000, 0.95, 42).unwrap());
    }

    #[test]
    fn bootstrap_errors() {
        assert!(bootstrap_ci(&[0.1], 100, 0.95, 0).is_err());
        assert!(bootstrap_ci(&[0.1, 0.2], 0, 0.95, 0).is_err());
        assert!(bootstrap_ci(&[0.1, 0.2], 10, 1.5, 0).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile(&s, 0.0), 0.0);
        assert_eq!(quantile(&s, 1.0), 3.0);
        assert!((quantile(&s, 0.5) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn t_test_conventions() {
        assert_eq!(paired_t(&[0.0; 5]).unwrap().p_value, 1.0);
        let r = paired_t(&[1.0, -1.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert!(paired_t(&[1.0]).is_err());
        assert_eq!(paired_t(&[0.2; 4]).unwrap().p_value, 0.0);
    }

    #[test]
    fn t_test_reference_value() {
        // scipy.stats.ttest_1samp(d, 0)
        let d = [0.12, -0.03, 0.08, 0.15, 0.02, 0.07, -0.01, 0.11, 0.05, 0.09];
        let r = paired_t(&d).unwrap();
        assert!((r.t - 3.5572334966586627).abs() < 1e-9);
        assert!((r.p_value - 0.0061458495751784015).abs() < 1e-6);
        assert_eq!(r.df, 9.0);
    }

    proptest! {
        #[test]
        fn ci_brackets_mean(d in proptest::collection::vec(-1.0f64..1.0, 2..30), seed in any::<u64>()) {
            let r = bootstrap_ci(&d, 400, 0.95, seed).unwrap();
            prop_assert!(r.ci_low <= r.ci_high);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert_eq!(&r, &bootstrap_ci(&d, 400, 0.95, seed).unwrap());
        }

        #[test]
        fn t_p_value_in_range(d in proptest::collection::vec(-1.0f64..1.0, 2..30)) {
            let r = paired_t(&d).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
