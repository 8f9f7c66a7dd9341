use serde::{Deserialize, Serialize};

use super::{cohens_d, mean, spearman, variance};
use crate::error::{Error, Result};
use crate::metrics::GroundTruth;
use crate::retrieval::CandidatePool;
use crate::scoring::ScoreTable;

/// Equal-width bins used for the overlap estimate.
pub const OVERLAP_BINS: usize = 50;

/// How well reranker scores separate relevant from irrelevant pool items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeparationReport {
    pub mean_rel: f64,
    pub sd_rel: f64,
    pub mean_irr: f64,
    pub sd_irr: f64,
    pub mean_diff: f64,
    pub cohens_d: f64,
    pub spearman_r: f64,
    pub overlap_fraction: f64,
    pub n_rel: usize,
    pub n_irr: usize,
}

/// Scores every pool entry and splits them by ground-truth membership.
pub fn score_separation(
    scores: &ScoreTable,
    pools: &[CandidatePool],
    gt: &GroundTruth,
) -> Result<ScoreSeparationReport> {
    let mut labeled = Vec::new();
    for pool in pools {
        let user_gt = gt
            .get(&pool.user_id)
            .ok_or_else(|| Error::Inconsistent(format!("no ground truth for `{}`", pool.user_id)))?;
        for id in pool.item_ids() {
            labeled.push((scores.require(&pool.user_id, id)?, user_gt.contains(id)));
        }
    }
    separation_from_labeled(&labeled)
}

/// Separation statistics from `(score, relevant)` pairs.
pub fn separation_from_labeled(labeled: &[(f64, bool)]) -> Result<ScoreSeparationReport> {
    let rel: Vec<f64> = labeled.iter().filter(|p| p.1).map(|p| p.0).collect();
    let irr: Vec<f64> = labeled.iter().filter(|p| !p.1).map(|p| p.0).collect();
    if rel.is_empty() || irr.is_empty() {
        return Err(Error::EmptyInput("both relevant and irrelevant scores are required"));
    }
    let sd = |v: &[f64]| if v.len() > 1 { variance(v).sqrt() } else { 0.0 };
    let mean_diff = mean(&rel) - mean(&irr);
    let d = if rel.len() > 1 && irr.len() > 1 {
        cohens_d(&rel, &irr).unwrap_or(0.0)
    } else {
        0.0
    };
    let scores: Vec<f64> = labeled.iter().map(|p| p.0).collect();
    let labels: Vec<f64> = labeled.iter().map(|p| if p.1 { 1.0 } else { 0.0 }).collect();
    let spearman_r = if labeled.len() >= 3 {
        spearman(&scores, &labels).map(|c| c.r).unwrap_or(0.0)
    } else {
        0.0
    };
    Ok(ScoreSeparationReport {
        mean_rel: mean(&rel),
        sd_rel: sd(&rel),
        mean_irr: mean(&irr),
        sd_irr: sd(&irr),
        mean_diff,
        cohens_d: d,
        spearman_r,
        overlap_fraction: histogram_overlap(&rel, &irr, OVERLAP_BINS),
        n_rel: rel.len(),
        n_irr: irr.len(),
    })
}

/// Shared area of two normalized histograms over the pooled range.
pub fn histogram_overlap(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let (lo, hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let hist = |v: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in v {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            h[b] += 1.0 / v.len() as f64;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    ha.iter().zip(&hb).map(|(x, y)| x.min(*y)).sum::<f64>().min(1.0)
}
