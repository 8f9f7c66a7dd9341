use serde::{Deserialize, Serialize};

use super::mean;
use super::paired::student_t_two_sided;
use crate::error::{Error, Result};

/// 1-based ranks with ties sharing their average rank.
pub fn rank_average(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64], min_n: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Inconsistent(format!(
            "samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_n {
        return Err(Error::InvalidParameter(format!(
            "need at least {min_n} observations, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Centered sums `(Sxx, Syy, Sxy)`.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).fold((0.0, 0.0, 0.0), |(sxx, syy, sxy), (a, b)| {
        let (dx, dy) = (a - mx, b - my);
        (sxx + dx * dx, syy + dy * dy, sxy + dx * dy)
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (sxx, syy, sxy) = moments(x, y);
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("correlation of a constant sample"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided, from the t approximation with `n − 2` degrees of freedom.
    pub p: f64,
    pub n: usize,
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y, 3)?;
    let r = pearson(&rank_average(x), &rank_average(y))
        .map_err(|_| Error::ZeroVariance("rank variance is zero"))?;
    Ok(Correlation {
        r,
        p: correlation_p(r, x.len()),
        n: x.len(),
    })
}

fn correlation_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    pub r_squared: f64,
    /// Two-sided p-value for the slope.
    pub p_value: f64,
    pub n: usize,
}

/// Ordinary least squares for `y = intercept + slope·x`.
pub fn ols_simple(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    check_pair(x, y, 3)?;
    let (sxx, syy, sxy) = moments(x, y);
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("regressor is constant"));
    }
    let slope = sxy / sxx;
    let intercept = mean(y) - slope * mean(x);
    let r = if syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    };
    let n = x.len();
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let se = (sse / (n - 2) as f64 / sxx).sqrt();
    let p_value = if se > 0.0 {
        student_t_two_sided(slope / se, (n - 2) as f64)
    } else if slope != 0.0 {
        0.0
    } else {
        1.0
    };
    Ok(RegressionFit {
        slope,
        intercept,
        pearson_r: r,
        r_squared: r * r,
        p_value,
        n,
    })
}
