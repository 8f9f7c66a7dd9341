//! Statistics against frozen scipy 1.15 values, plus the invariance
//! properties every paired test must satisfy.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rerank_diag::stats::{
    bootstrap_ci, cohens_d, compare_paired, ols_simple, paired_t, pearson, spearman, wilcoxon_signed_rank,
    wilcoxon_signed_rank_with, WilcoxonMethod,
};

const X: [f64; 10] = [2.1, 3.4, 1.9, 5.0, 4.2, 3.3, 2.8, 6.1, 4.4, 3.9];
const Y: [f64; 10] = [1.6, 4.6, 0.2, 3.6, 4.5, 1.1, 0.9, 5.9, 2.3, 3.2];

#[test]
fn paired_t_matches_scipy() {
    // scipy.stats.ttest_rel(X, Y)
    let t = paired_t(&X, &Y).unwrap();
    assert_abs_diff_eq!(t.t, 2.567_469_632_055_358_7, epsilon = 1e-10);
    assert_abs_diff_eq!(t.p, 0.030_313_369_377_318_94, epsilon = 1e-10);
    assert_eq!(t.df, 9.0);
}

#[test]
fn wilcoxon_matches_scipy() {
    // scipy.stats.wilcoxon(X, Y, method="exact" | "approx", correction=True)
    let exact = wilcoxon_signed_rank_with(&X, &Y, WilcoxonMethod::Exact).unwrap();
    assert_eq!(exact.w, 7.0);
    assert_abs_diff_eq!(exact.p, 0.037_109_375, epsilon = 1e-12);
    let normal = wilcoxon_signed_rank_with(&X, &Y, WilcoxonMethod::Normal).unwrap();
    assert_abs_diff_eq!(normal.p, 0.041_491_087_387_731_57, epsilon = 1e-10);
}

#[test]
fn wilcoxon_ties_and_zeros_match_scipy() {
    // Zeros dropped, tied magnitudes averaged; n = 28 uses the normal branch.
    let d = [
        1., -2., 3., 3., 0., 4., -1., 2., 2., 5., -3., 1., 1., 6., 0., 2., -2., 3., 4., 1., 1., -1., 2., 7., 3., 2., -4.,
        5., 1., 2.,
    ];
    let zeros = vec![0.0; d.len()];
    let w = wilcoxon_signed_rank(&d, &zeros).unwrap();
    assert_eq!(w.n, 28);
    assert_abs_diff_eq!(w.p, 0.003_746_253_575_879_686, epsilon = 1e-10);
}

#[test]
fn regression_matches_scipy() {
    // scipy.stats.linregress(X, Y)
    let fit = ols_simple(&X, &Y).unwrap();
    assert_abs_diff_eq!(fit.slope, 1.160_514_281_927_231_8, epsilon = 1e-12);
    assert_abs_diff_eq!(fit.intercept, -1.515_507_985_950_029_6, epsilon = 1e-12);
    assert_abs_diff_eq!(fit.pearson_r, 0.803_343_500_417_860_5, epsilon = 1e-12);
    assert_abs_diff_eq!(fit.p_value, 0.005_122_303_824_921_175, epsilon = 1e-10);
    assert_abs_diff_eq!(fit.r_squared, fit.pearson_r * fit.pearson_r, epsilon = 1e-12);
}

#[test]
fn bootstrap_narrows_with_n() {
    let sample = |n: usize| -> Vec<f64> { (0..n).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect() };
    let width = |n: usize| {
        let (lo, hi) = bootstrap_ci(&sample(n), 0.95, 4000, 11).unwrap();
        hi - lo
    };
    assert!(width(400) < width(100));
}

fn paired() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(-50i32..50, n),
            proptest::collection::vec(-50i32..50, n),
        )
            .prop_map(|(a, b)| {
                // Quarter steps keep arithmetic exact so shifts cannot perturb ties.
                let f = |v: Vec<i32>| v.into_iter().map(|x| f64::from(x) / 4.0).collect::<Vec<_>>();
                (f(a), f(b))
            })
    })
}

proptest! {
    #[test]
    fn paired_tests_depend_only_on_differences((x, y) in paired(), shift in -64i32..64) {
        let s = f64::from(shift);
        let xs: Vec<f64> = x.iter().map(|v| v + s).collect();
        let ys: Vec<f64> = y.iter().map(|v| v + s).collect();
        let a = compare_paired(&x, &y, 1000, 5).unwrap();
        let b = compare_paired(&xs, &ys, 1000, 5).unwrap();
        prop_assert_eq!(a.t_stat.is_some(), b.t_stat.is_some());
        if let (Some(ta), Some(tb)) = (a.t_stat, b.t_stat) {
            prop_assert!((ta - tb).abs() <= 1e-9 * ta.abs().max(1.0));
        }
        prop_assert!((a.p_t - b.p_t).abs() <= 1e-9);
        prop_assert!((a.p_w - b.p_w).abs() <= 1e-12);
        prop_assert!((a.mean_diff - b.mean_diff).abs() <= 1e-9);
    }

    #[test]
    fn report_invariants((x, y) in paired(), seed in any::<u64>()) {
        let r = compare_paired(&x, &y, 1000, seed).unwrap();
        prop_assert!(r.ci_low <= r.mean_diff + 1e-12 && r.mean_diff <= r.ci_high + 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.p_t));
        prop_assert!((0.0..=1.0).contains(&r.p_w));
    }

    #[test]
    fn cohens_d_is_antisymmetric((x, y) in paired()) {
        match (cohens_d(&x, &y), cohens_d(&y, &x)) {
            (Ok(a), Ok(b)) => prop_assert!((a + b).abs() <= 1e-12),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn spearman_ignores_increasing_transforms((x, y) in paired()) {
        let tx: Vec<f64> = x.iter().map(|v| v.exp() + 3.0 * v).collect();
        let ty: Vec<f64> = y.iter().map(|v| v * v * v + v).collect();
        match (spearman(&x, &y), spearman(&tx, &ty)) {
            (Ok(a), Ok(b)) => prop_assert!((a.r - b.r).abs() <= 1e-12),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn r_squared_is_pearson_squared((x, y) in paired()) {
        if let (Ok(fit), Ok(r)) = (ols_simple(&x, &y), pearson(&x, &y)) {
            prop_assert!((fit.r_squared - r * r).abs() <= 1e-12);
        }
    }
}
