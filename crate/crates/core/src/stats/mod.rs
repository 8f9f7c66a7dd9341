//! Paired significance tests, effect sizes, correlation and regression.
//!
//! Student-t and normal tail probabilities come from `statrs`, whose
//! regularized incomplete beta uses a continued-fraction expansion.

mod correlation;
mod paired;
mod separation;

use serde::{Deserialize, Serialize};

pub use correlation::{ols_simple, pearson, rank_average, spearman, Correlation, RegressionFit};
pub use paired::{
    bootstrap_ci, cohens_d, effect_size_label, paired_t, wilcoxon_signed_rank,
    wilcoxon_signed_rank_with, TTest, WilcoxonMethod, WilcoxonTest,
};
pub use separation::{histogram_overlap, score_separation, separation_from_labeled, ScoreSeparationReport};

use crate::error::{Error, Result};

/// Bootstrap resamples used when the caller does not choose.
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Paired comparison of two systems over the same users (`x − y`).
///
/// `t_stat` is `None` when every difference is identical (zero variance);
/// `p_t` is then 1 if the common difference is 0 and 0 otherwise. The same
/// convention applies to Wilcoxon when all differences are zero. `cohens_d`
/// is `None` when the pooled variance is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestReport {
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t_stat: Option<f64>,
    pub p_t: f64,
    pub wilcoxon_w: f64,
    pub p_w: f64,
    pub cohens_d: Option<f64>,
    pub effect: Option<String>,
    pub n: usize,
}

pub fn compare_paired(x: &[f64], y: &[f64], resamples: usize, seed: u64) -> Result<StatTestReport> {
    if x.len() != y.len() {
        return Err(Error::Inconsistent(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let n = diffs.len();
    let mean_diff = mean(&diffs);
    let (ci_low, ci_high) = bootstrap_ci(&diffs, 0.95, resamples, seed)?;
    let (t_stat, p_t) = match paired_t(x, y) {
        Ok(t) => (Some(t.t), t.p),
        Err(Error::ZeroVariance(_)) => (None, if mean_diff == 0.0 { 1.0 } else { 0.0 }),
        Err(e) => return Err(e),
    };
    let (wilcoxon_w, p_w) = match wilcoxon_signed_rank(x, y) {
        Ok(w) => (w.w, w.p),
        Err(Error::ZeroVariance(_)) => (0.0, 1.0),
        Err(e) => return Err(e),
    };
    let d = cohens_d(x, y).ok();
    Ok(StatTestReport {
        mean_diff,
        ci_low,
        ci_high,
        t_stat,
        p_t,
        wilcoxon_w,
        p_w,
        cohens_d: d,
        effect: d.map(|d| effect_size_label(d).to_string()),
        n,
    })
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with `n − 1` in the denominator.
pub(crate) fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_are_a_defined_degenerate_result() {
        let x = [0.0, 1.0, 1.0, 0.0];
        let r = compare_paired(&x, &x, 1000, 1).unwrap();
        assert_eq!(r.mean_diff, 0.0);
        assert_eq!(r.t_stat, None);
        assert_eq!((r.p_t, r.p_w), (1.0, 1.0));
        assert_eq!(r.cohens_d, Some(0.0));
        assert_eq!((r.ci_low, r.ci_high), (0.0, 0.0));
    }

    #[test]
    fn report_fields_consistent() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 5) as f64).collect();
        let y: Vec<f64> = (0..40).map(|i| ((i * 3) % 4) as f64).collect();
        let r = compare_paired(&x, &y, 2000, 9).unwrap();
        assert!(r.ci_low <= r.mean_diff && r.mean_diff <= r.ci_high);
        assert!((0.0..=1.0).contains(&r.p_t) && (0.0..=1.0).contains(&r.p_w));
        assert_eq!(r.n, 40);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.starts_with("{\"mean_diff\":"));
        let back: StatTestReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
