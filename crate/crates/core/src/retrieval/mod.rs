//! Candidate generation.
//!
//! Every retriever returns a [`CandidatePool`]: item ids with retrieval scores,
//! sorted by descending score with ties broken by ascending item id.

mod baseline;
mod bm25;
pub(crate) mod embeddings;
mod flat;
mod hybrid;

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baseline::{popularity_topk, random_topk};
pub use bm25::{bm25_search, tokenize, Bm25Index, Bm25Params};
pub use embeddings::{load_embeddings, save_embeddings, EmbeddingSet};
pub use flat::{flat_search, full_ranking};
pub use hybrid::hybrid_union;

/// Ordered retrieval output for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub user_id: String,
    pub entries: Vec<(String, f64)>,
    pub pool_size: usize,
}

impl CandidatePool {
    /// Sorts `scored` by the ranking order and keeps the first `k`.
    pub fn from_scored(user_id: impl Into<String>, mut scored: Vec<(String, f64)>, k: usize) -> Self {
        top_k_in_place(&mut scored, k, |a, b| rank_order(a.1, &a.0, b.1, &b.0));
        CandidatePool {
            user_id: user_id.into(),
            entries: scored,
            pool_size: k,
        }
    }

    pub fn for_user(mut self, user_id: impl Into<String>) -> Self {
        self.user_id = user_id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    /// The first `k` entries as a new pool.
    pub fn truncated(&self, k: usize) -> CandidatePool {
        CandidatePool {
            user_id: self.user_id.clone(),
            entries: self.entries.iter().take(k).cloned().collect(),
            pool_size: k,
        }
    }

    /// Checks the pool invariants: unique ids, bounded length, non-increasing scores.
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() > self.pool_size {
            return Err(Error::Inconsistent(format!(
                "pool for `{}` has {} entries but pool_size {}",
                self.user_id,
                self.entries.len(),
                self.pool_size
            )));
        }
        let mut seen = HashSet::with_capacity(self.entries.len());
        for (id, _) in &self.entries {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if self.entries.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(Error::Inconsistent(format!(
                "pool for `{}` is not sorted by score",
                self.user_id
            )));
        }
        Ok(())
    }
}

/// Descending score, then ascending id. `-0.0` and `0.0` are the same score.
pub(crate) fn rank_order(score_a: f64, id_a: &str, score_b: f64, id_b: &str) -> Ordering {
    // Adding 0.0 maps -0.0 to 0.0; total_cmp would otherwise split them.
    (score_b + 0.0).total_cmp(&(score_a + 0.0)).then_with(|| id_a.cmp(id_b))
}

/// Partially sorts `v` so its first `min(k, len)` elements are the top-k in
/// ranking order, then truncates.
pub(crate) fn top_k_in_place<T, C>(v: &mut Vec<T>, k: usize, cmp: C)
where
    C: Fn(&T, &T) -> Ordering,
{
    if k == 0 {
        v.clear();
        return;
    }
    if k < v.len() {
        v.select_nth_unstable_by(k - 1, &cmp);
        v.truncate(k);
    }
    v.sort_unstable_by(cmp);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_zero_scores_tie_by_id() {
        let mut v = vec![("b", 0.0), ("a", -0.0), ("c", 0.5)];
        top_k_in_place(&mut v, 3, |x, y| rank_order(x.1, x.0, y.1, y.0));
        let ids: Vec<&str> = v.iter().map(|e| e.0).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }
}
