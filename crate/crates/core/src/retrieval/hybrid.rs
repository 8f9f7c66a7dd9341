use std::collections::HashMap;

use super::{rank_order, top_k_in_place, CandidatePool};
use crate::error::{Error, Result};

/// Deduplicated union of several pools for one user.
///
/// Each source pool is min-max normalized over its own entries (a constant
/// pool maps to 1); an item's merged score is its maximum normalized score
/// over the pools that contain it.
pub fn hybrid_union(pools: &[CandidatePool], k_total: usize) -> Result<CandidatePool> {
    let first = pools.first().ok_or(Error::EmptyInput("hybrid_union needs at least one pool"))?;
    if let Some(other) = pools.iter().find(|p| p.user_id != first.user_id) {
        return Err(Error::Inconsistent(format!(
            "pools for different users: `{}` and `{}`",
            first.user_id, other.user_id
        )));
    }
    let mut merged: HashMap<&str, f64> = HashMap::new();
    for pool in pools {
        let (lo, hi) = pool
            .entries
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, s)| {
                (lo.min(*s), hi.max(*s))
            });
        let span = hi - lo;
        for (id, s) in &pool.entries {
            let norm = if span > 0.0 { (s - lo) / span } else { 1.0 };
            merged
                .entry(id.as_str())
                .and_modify(|m| *m = m.max(norm))
                .or_insert(norm);
        }
    }
    let mut scored: Vec<(String, f64)> = merged
        .into_iter()
        .map(|(id, s)| (id.to_string(), s))
        .collect();
    top_k_in_place(&mut scored, k_total, |a, b| rank_order(a.1, &a.0, b.1, &b.0));
    Ok(CandidatePool {
        user_id: first.user_id.clone(),
        entries: scored,
        pool_size: k_total,
    })
}
