use super::embeddings::{dot, l2_norm};
use super::{rank_order, top_k_in_place, CandidatePool, EmbeddingSet};
use crate::error::{Error, Result};

/// Exact top-`k` by cosine similarity: an exhaustive scan over every row.
///
/// The query is normalized, so scores are cosines in `[-1, 1]`. A zero query
/// scores every item 0 and the pool falls back to id order.
pub fn flat_search(query: &[f64], embeddings: &EmbeddingSet, k: usize) -> Result<CandidatePool> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if query.len() != embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.dim(),
            actual: query.len(),
        });
    }
    let norm = l2_norm(query);
    let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    let mut scored: Vec<(usize, f64)> = (0..embeddings.len())
        .map(|row| (row, dot(query, embeddings.vector(row)) * scale))
        .collect();
    let ids = embeddings.ids();
    top_k_in_place(&mut scored, k, |a, b| {
        rank_order(a.1, &ids[a.0], b.1, &ids[b.0])
    });
    Ok(CandidatePool {
        user_id: String::new(),
        entries: scored
            .into_iter()
            .map(|(row, s)| (ids[row].clone(), s))
            .collect(),
        pool_size: k,
    })
}

/// Complete ordering of the embedding set for `query`.
pub fn full_ranking(query: &[f64], embeddings: &EmbeddingSet) -> Result<CandidatePool> {
    flat_search(query, embeddings, embeddings.len().max(1))
}
