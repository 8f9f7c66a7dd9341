use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::{mean, variance};
use crate::error::{Error, Result};
use crate::metrics::quantile_sorted;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub mean_diff: f64,
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: f64,
}

/// Paired Student t-test on `x − y`.
pub fn paired_t(x: &[f64], y: &[f64]) -> Result<TTest> {
    let diffs = paired_diffs(x, y)?;
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("paired t needs n >= 2, got {n}")));
    }
    let d = mean(&diffs);
    let sd = variance(&diffs).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::ZeroVariance("all paired differences are identical"));
    }
    let t = d / (sd / (n as f64).sqrt());
    let df = (n - 1) as f64;
    Ok(TTest {
        mean_diff: d,
        t,
        p: student_t_two_sided(t, df),
        df,
    })
}

pub(crate) fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

fn paired_diffs(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::Inconsistent(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.iter().zip(y).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WilcoxonMethod {
    /// Exact for at most 25 non-zero differences, normal approximation above.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonTest {
    /// `min(W+, W−)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided.
    pub p: f64,
    /// Differences left after discarding zeros.
    pub n: usize,
    pub method: WilcoxonMethod,
}

pub const WILCOXON_EXACT_MAX_N: usize = 25;

pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonTest> {
    wilcoxon_signed_rank_with(x, y, WilcoxonMethod::Auto)
}

/// Wilcoxon signed-rank test on `x − y`. Zero differences are discarded and
/// tied magnitudes get average ranks.
pub fn wilcoxon_signed_rank_with(x: &[f64], y: &[f64], method: WilcoxonMethod) -> Result<WilcoxonTest> {
    let diffs: Vec<f64> = paired_diffs(x, y)?
        .into_iter()
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Err(Error::ZeroVariance("all paired differences are zero"));
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = super::rank_average(&magnitudes);
    let (mut w_plus, mut w_minus) = (0.0, 0.0);
    for (d, r) in diffs.iter().zip(&ranks) {
        if *d > 0.0 {
            w_plus += r;
        } else {
            w_minus += r;
        }
    }
    let w = w_plus.min(w_minus);
    let method = match method {
        WilcoxonMethod::Auto if n <= WILCOXON_EXACT_MAX_N => WilcoxonMethod::Exact,
        WilcoxonMethod::Auto => WilcoxonMethod::Normal,
        m => m,
    };
    let p = match method {
        WilcoxonMethod::Exact => wilcoxon_exact_p(&ranks, w),
        _ => wilcoxon_normal_p(&magnitudes, w),
    };
    Ok(WilcoxonTest {
        w,
        w_plus,
        w_minus,
        p,
        n,
        method,
    })
}

/// Exact two-sided p-value conditional on the observed (possibly tied) ranks.
///
/// Doubled ranks are integers even with average ranks, so the null
/// distribution of the positive-rank sum is a subset-sum count over 2^n sign
/// assignments.
fn wilcoxon_exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let tail: f64 = counts[..=limit.min(total)].iter().sum();
    let all = 2f64.powi(ranks.len() as i32);
    (2.0 * tail / all).min(1.0)
}

/// Normal approximation with tie and continuity corrections.
fn wilcoxon_normal_p(magnitudes: &[f64], w: f64) -> f64 {
    let n = magnitudes.len() as f64;
    let mu = n * (n + 1.0) / 4.0;
    let mut sorted = magnitudes.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mu + 0.5) / var.sqrt()).min(0.0);
    (2.0 * normal_cdf(z)).min(1.0)
}

/// Standardized mean difference with pooled standard deviation.
pub fn cohens_d(x: &[f64], y: &[f64]) -> Result<f64> {
    let (nx, ny) = (x.len(), y.len());
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidParameter(format!(
            "Cohen's d needs at least 2 values per group, got {nx} and {ny}"
        )));
    }
    let pooled = (((nx - 1) as f64 * variance(x) + (ny - 1) as f64 * variance(y))
        / (nx + ny - 2) as f64)
        .sqrt();
    let diff = mean(x) - mean(y);
    if pooled == 0.0 {
        return if diff == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::ZeroVariance("pooled standard deviation is zero"))
        };
    }
    Ok(diff / pooled)
}

/// Effect-size band for `|d|`.
pub fn effect_size_label(d: f64) -> &'static str {
    match d.abs() {
        a if a < 0.2 => "small",
        a if a < 0.5 => "medium",
        a if a < 0.8 => "medium-to-large",
        _ => "large",
    }
}

/// Percentile bootstrap interval for the mean of `sample`.
pub fn bootstrap_ci(sample: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("bootstrap needs n >= 2, got {n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must be in (0, 1), got {level}")));
    }
    if resamples < 1000 {
        return Err(Error::InvalidParameter(format!(
            "at least 1000 resamples required, got {resamples}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut sum = 0.0;
            for _ in 0..n {
                sum += sample[rng.random_range(0..n)];
            }
            sum / n as f64
        })
        .collect();
    means.sort_unstable_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn t_on_one_two_three() {
        let t = paired_t(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(t.t, 2.0 * 3f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(t.p, 0.0742, epsilon = 1e-3);
        assert_eq!(t.df, 2.0);
    }

    #[test]
    fn t_distribution_table_values() {
        // Two-sided critical values: t(0.975, 10) = 2.228, t(0.995, 2) = 9.925.
        assert_abs_diff_eq!(student_t_two_sided(2.228_138_851_964_938_5, 10.0), 0.05, epsilon = 1e-10);
        assert_abs_diff_eq!(student_t_two_sided(9.924_843_200_918_07, 2.0), 0.01, epsilon = 1e-10);
        assert_abs_diff_eq!(normal_cdf(1.959_963_984_540_054), 0.975, epsilon = 1e-10);
    }

    #[test]
    fn t_errors() {
        assert!(matches!(paired_t(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::ZeroVariance(_))));
        assert!(paired_t(&[1.0], &[0.0]).is_err());
        assert!(paired_t(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn t_depends_only_on_differences() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0];
        let y = [0.5, 3.0, 2.5, 6.0, 1.0];
        let shifted_x: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
        let shifted_y: Vec<f64> = y.iter().map(|v| v + 100.0).collect();
        let a = paired_t(&x, &y).unwrap();
        let b = paired_t(&shifted_x, &shifted_y).unwrap();
        assert_abs_diff_eq!(a.t, b.t, epsilon = 1e-9);
        let wa = wilcoxon_signed_rank(&x, &y).unwrap();
        let wb = wilcoxon_signed_rank(&shifted_x, &shifted_y).unwrap();
        assert_eq!(wa.w, wb.w);
    }

    #[test]
    fn wilcoxon_one_sided_mass() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let w = wilcoxon_signed_rank(&x, &[0.0; 5]).unwrap();
        assert_eq!(w.w, 0.0);
        assert_eq!(w.w_plus, 15.0);
        // Exact: two of 32 sign patterns are as extreme.
        assert_abs_diff_eq!(w.p, 2.0 / 32.0, epsilon = 1e-15);
    }

    #[test]
    fn wilcoxon_tied_pair() {
        let w = wilcoxon_signed_rank(&[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(w.w, 1.5);
        assert_eq!(w.p, 1.0);
    }

    #[test]
    fn wilcoxon_discards_zeros() {
        let w = wilcoxon_signed_rank(&[1.0, 0.0, 2.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(w.n, 2);
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::ZeroVariance(_))
        ));
    }

    /// Enumerates all 2^n sign patterns directly.
    fn brute_exact_p(ranks: &[f64], w: f64) -> f64 {
        let n = ranks.len();
        let mut extreme = 0u64;
        for mask in 0u64..(1 << n) {
            let plus: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if plus <= w + 1e-9 {
                extreme += 1;
            }
        }
        (2.0 * extreme as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn wilcoxon_exact_matches_enumeration() {
        let cases: [&[f64]; 4] = [
            &[1.0, -2.0, 3.0, 4.0, -5.0, 6.0, 7.0, 8.0],
            &[0.5, 0.5, -0.5, 1.5, 2.0, -2.0, 3.0, 3.0, 3.0, -4.0],
            &[-1.0, -2.0, -3.0, 0.1, 0.2],
            &[2.0, 2.0, 2.0, 2.0, -2.0, 1.0, 1.0],
        ];
        for d in cases {
            let zeros = vec![0.0; d.len()];
            let w = wilcoxon_signed_rank_with(d, &zeros, WilcoxonMethod::Exact).unwrap();
            let mags: Vec<f64> = d.iter().map(|v| v.abs()).collect();
            let ranks = crate::stats::rank_average(&mags);
            assert_abs_diff_eq!(w.p, brute_exact_p(&ranks, w.w), epsilon = 1e-12);
        }
    }

    #[test]
    fn wilcoxon_exact_vs_normal_at_ten() {
        let d = [1.2, -0.4, 2.5, 3.1, -1.7, 0.9, 2.2, 4.0, -0.3, 1.5];
        let zeros = [0.0; 10];
        let exact = wilcoxon_signed_rank_with(&d, &zeros, WilcoxonMethod::Exact).unwrap();
        let approx = wilcoxon_signed_rank_with(&d, &zeros, WilcoxonMethod::Normal).unwrap();
        assert_eq!(exact.w, approx.w);
        // Reference values from an independent implementation (scipy).
        assert_abs_diff_eq!(exact.p, 0.064_453_125, epsilon = 1e-12);
        assert_abs_diff_eq!(approx.p, 0.066_545_721_343_716_14, epsilon = 1e-9);
        assert!((exact.p - approx.p).abs() < 0.02, "{} vs {}", exact.p, approx.p);
    }

    #[test]
    fn cohens_d_hand_case() {
        let d = cohens_d(&[0.0, 0.0, 1.0, 1.0], &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(d, -3f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(d, -1.732_051, epsilon = 1e-6);
        let back = cohens_d(&[1.0, 1.0, 2.0, 2.0], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(back, -d);
        assert_eq!(cohens_d(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(cohens_d(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(cohens_d(&[1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn effect_bands() {
        assert_eq!(effect_size_label(0.11), "small");
        assert_eq!(effect_size_label(-0.3), "medium");
        assert_eq!(effect_size_label(-0.593), "medium-to-large");
        assert_eq!(effect_size_label(1.7), "large");
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        let c = [0.5; 20];
        assert_eq!(bootstrap_ci(&c, 0.95, 1000, 3).unwrap(), (0.5, 0.5));
        let s: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        assert_eq!(
            bootstrap_ci(&s, 0.95, 2000, 8).unwrap(),
            bootstrap_ci(&s, 0.95, 2000, 8).unwrap()
        );
        assert!(bootstrap_ci(&[1.0], 0.95, 1000, 1).is_err());
        assert!(bootstrap_ci(&s, 1.0, 1000, 1).is_err());
        assert!(bootstrap_ci(&s, 0.95, 10, 1).is_err());
    }
}
