//! Ranking quality, coverage and exposure metrics.
//!
//! Relevance is binary: an item is relevant to a user iff it is in the user's
//! ground-truth set.
//!
//! Conventions for users whose ground truth is empty (for example because all
//! of it was missing from the catalog): they count as misses in HR and score 0
//! in nDCG, and they are excluded from recall averages. [`RecallSummary`]
//! reports how many users were excluded.
//!
//! The Gini coefficient is computed over items with at least one top-1
//! exposure. Under this support a single item shown to everyone has Gini 0,
//! the same as perfectly spread exposure; read it together with
//! `unique_top1`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::UserRecord;
use crate::error::{Error, Result};
use crate::retrieval::CandidatePool;

/// Ground-truth item sets keyed by user id.
pub type GroundTruth = HashMap<String, BTreeSet<String>>;

pub fn ground_truth(users: &[UserRecord]) -> GroundTruth {
    users
        .iter()
        .map(|u| (u.id.clone(), u.gt_items.clone()))
        .collect()
}

/// Final top-K recommendations for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user_id: String,
    pub entries: Vec<(String, f64)>,
    pub k: usize,
}

impl RankedList {
    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn top1(&self) -> Option<&str> {
        self.entries.first().map(|(id, _)| id.as_str())
    }
}

impl From<CandidatePool> for RankedList {
    fn from(pool: CandidatePool) -> Self {
        RankedList {
            user_id: pool.user_id,
            entries: pool.entries,
            k: pool.pool_size,
        }
    }
}

/// One line of a per-user results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerUserResult {
    pub user_id: String,
    pub hit: u8,
    pub ndcg: f64,
    /// Recall at each coverage cutoff; empty when the user has no ground truth.
    pub recall: BTreeMap<usize, f64>,
    pub top1: Option<String>,
    pub rerank_seconds: f64,
}

pub fn hit_at_k<'a>(ids: impl IntoIterator<Item = &'a str>, gt: &BTreeSet<String>, k: usize) -> bool {
    ids.into_iter().take(k).any(|id| gt.contains(id))
}

/// Binary-relevance nDCG@K; 0 when the ground truth is empty.
pub fn ndcg_at_k<'a>(ids: impl IntoIterator<Item = &'a str>, gt: &BTreeSet<String>, k: usize) -> f64 {
    let ideal_hits = gt.len().min(k);
    if ideal_hits == 0 {
        return 0.0;
    }
    let dcg: f64 = ids
        .into_iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| gt.contains(*id))
        .map(|(rank, _)| discount(rank))
        .sum();
    let idcg: f64 = (0..ideal_hits).map(discount).sum();
    dcg / idcg
}

/// `1 / log2(i + 1)` for the 1-based position `i = rank + 1`.
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 2) as f64).log2()
}

/// `|top-K ∩ GT| / |GT|`, or `None` for an empty ground truth.
pub fn recall_at_k<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    gt: &BTreeSet<String>,
    k: usize,
) -> Option<f64> {
    if gt.is_empty() {
        return None;
    }
    let found = ids.into_iter().take(k).filter(|id| gt.contains(*id)).count();
    Some(found as f64 / gt.len() as f64)
}

fn gt_for<'g>(gt: &'g GroundTruth, user: &str) -> Result<&'g BTreeSet<String>> {
    gt.get(user)
        .ok_or_else(|| Error::Inconsistent(format!("no ground truth for user `{user}`")))
}

/// Fraction of users with at least one relevant item in their top K.
pub fn hit_rate_at_k(lists: &[RankedList], gt: &GroundTruth, k: usize) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::EmptyInput("hit rate over zero users"));
    }
    let mut hits = 0usize;
    for list in lists {
        if hit_at_k(list.item_ids(), gt_for(gt, &list.user_id)?, k) {
            hits += 1;
        }
    }
    Ok(hits as f64 / lists.len() as f64)
}

/// Mean nDCG@K over users.
pub fn mean_ndcg_at_k(lists: &[RankedList], gt: &GroundTruth, k: usize) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::EmptyInput("nDCG over zero users"));
    }
    let mut total = 0.0;
    for list in lists {
        total += ndcg_at_k(list.item_ids(), gt_for(gt, &list.user_id)?, k);
    }
    Ok(total / lists.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecallSummary {
    /// Macro average over users with non-empty ground truth (0 if none).
    pub mean: f64,
    pub users_counted: usize,
    pub users_excluded: usize,
}

/// Macro-averaged Recall@K over candidate pools.
pub fn mean_recall_at_k(pools: &[CandidatePool], gt: &GroundTruth, k: usize) -> Result<RecallSummary> {
    let mut total = 0.0;
    let mut counted = 0;
    let mut excluded = 0;
    for pool in pools {
        match recall_at_k(pool.item_ids(), gt_for(gt, &pool.user_id)?, k) {
            Some(r) => {
                total += r;
                counted += 1;
            }
            None => excluded += 1,
        }
    }
    Ok(RecallSummary {
        mean: if counted > 0 { total / counted as f64 } else { 0.0 },
        users_counted: counted,
        users_excluded: excluded,
    })
}

/// Concentration of rank-1 recommendations across users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub unique_top1: usize,
    pub gini: f64,
    pub top1_histogram: BTreeMap<String, u64>,
    /// `(rank, cumulative share)` over items sorted by descending exposure.
    pub cumulative_curve: Vec<(usize, f64)>,
}

/// Gini coefficient of `counts` using the sorted-rank formula
/// `Σ (2i − n − 1)·x_i / (n·Σx)` with `x` ascending and `i` 1-based.
/// Zero counts are ignored.
pub fn gini(counts: &[u64]) -> f64 {
    let mut x: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    if x.is_empty() {
        return 0.0;
    }
    x.sort_unstable();
    let n = x.len() as f64;
    let total: f64 = x.iter().map(|&c| c as f64).sum();
    let weighted: f64 = x
        .iter()
        .enumerate()
        .map(|(i, &c)| (2.0 * (i + 1) as f64 - n - 1.0) * c as f64)
        .sum();
    weighted / (n * total)
}

/// `(rank, cumulative share)` of exposure counts sorted descending.
pub fn cumulative_exposure(counts: &[u64]) -> Vec<(usize, f64)> {
    let mut sorted: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let total: u64 = sorted.iter().sum();
    let mut acc = 0u64;
    let last = sorted.len();
    sorted
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            acc += c;
            // Pin the final point so rounding cannot leave it short of 1.
            let share = if i + 1 == last { 1.0 } else { acc as f64 / total as f64 };
            (i + 1, share)
        })
        .collect()
}

/// Exposure report from user top-1 items (`None` for empty lists).
pub fn exposure_from_top1<'a>(top1: impl IntoIterator<Item = Option<&'a str>>) -> ExposureReport {
    let mut histogram: BTreeMap<String, u64> = BTreeMap::new();
    for id in top1.into_iter().flatten() {
        *histogram.entry(id.to_string()).or_default() += 1;
    }
    let counts: Vec<u64> = histogram.values().copied().collect();
    ExposureReport {
        unique_top1: histogram.len(),
        gini: gini(&counts),
        cumulative_curve: cumulative_exposure(&counts),
        top1_histogram: histogram,
    }
}

pub fn exposure_report(lists: &[RankedList]) -> ExposureReport {
    exposure_from_top1(lists.iter().map(RankedList::top1))
}

/// Where ground-truth items land in complete rankings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GtPositionStats {
    /// 1-based positions of every ground-truth item, in user order.
    pub positions: Vec<usize>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// `(lower bound, upper bound, count)` over equal-width position bins.
    pub histogram: Vec<(f64, f64, usize)>,
    /// Macro-averaged per-user fraction of GT within each cutoff.
    pub within: BTreeMap<usize, f64>,
}

pub const DEFAULT_CUTOFFS: [usize; 3] = [50, 200, 1000];

/// Positions of ground-truth items in each user's full ordering.
pub fn gt_position_stats(
    orderings: &[CandidatePool],
    gt: &GroundTruth,
    cutoffs: &[usize],
    bins: usize,
) -> Result<GtPositionStats> {
    let mut positions = Vec::new();
    let mut within_sum: BTreeMap<usize, f64> = cutoffs.iter().map(|&c| (c, 0.0)).collect();
    let mut users = 0usize;
    for ordering in orderings {
        let user_gt = gt_for(gt, &ordering.user_id)?;
        if user_gt.is_empty() {
            continue;
        }
        let rank: HashMap<&str, usize> = ordering
            .item_ids()
            .enumerate()
            .map(|(i, id)| (id, i + 1))
            .collect();
        let mut user_positions = Vec::with_capacity(user_gt.len());
        for item in user_gt {
            let pos = *rank.get(item.as_str()).ok_or_else(|| {
                Error::Inconsistent(format!(
                    "ground-truth item `{item}` missing from the ordering for `{}`",
                    ordering.user_id
                ))
            })?;
            user_positions.push(pos);
        }
        for (&c, sum) in within_sum.iter_mut() {
            let inside = user_positions.iter().filter(|&&p| p <= c).count();
            *sum += inside as f64 / user_positions.len() as f64;
        }
        positions.extend(user_positions);
        users += 1;
    }
    if positions.is_empty() {
        return Err(Error::EmptyInput("no ground-truth items to locate"));
    }
    let mut sorted: Vec<f64> = positions.iter().map(|&p| p as f64).collect();
    sorted.sort_unstable_by(f64::total_cmp);
    let max = orderings.iter().map(CandidatePool::len).max().unwrap_or(1) as f64;
    Ok(GtPositionStats {
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
        histogram: histogram(&sorted, 1.0, max, bins.max(1)),
        within: within_sum
            .into_iter()
            .map(|(c, s)| (c, s / users as f64))
            .collect(),
        positions,
    })
}

/// Linear-interpolation quantile of an ascending slice.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn histogram(sorted: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0usize; bins];
    for &x in sorted {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c))
        .collect()
}
