use rand::Rng;

use super::{rank_order, top_k_in_place, CandidatePool};
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Most popular items first, ties by ascending id. Same pool for every user.
pub fn popularity_topk(catalog: &Catalog, k: usize) -> Result<CandidatePool> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let items = catalog.items();
    let mut scored: Vec<(usize, f64)> = items
        .iter()
        .enumerate()
        .map(|(i, item)| (i, item.popularity as f64))
        .collect();
    top_k_in_place(&mut scored, k, |a, b| {
        rank_order(a.1, &items[a.0].id, b.1, &items[b.0].id)
    });
    Ok(CandidatePool {
        user_id: String::new(),
        entries: scored
            .into_iter()
            .map(|(i, s)| (items[i].id.clone(), s))
            .collect(),
        pool_size: k,
    })
}

/// `k` items drawn uniformly without replacement (partial Fisher-Yates).
///
/// Entries keep their draw order; the retrieval score `1 - j/k` of the j-th
/// draw encodes that order.
pub fn random_topk(catalog: &Catalog, k: usize, seed: u64) -> Result<CandidatePool> {
    let n = catalog.len();
    if k > n {
        return Err(Error::TooMany {
            requested: k,
            available: n,
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for j in 0..k {
        let pick = rng.random_range(j..n);
        order.swap(j, pick);
    }
    let items = catalog.items();
    Ok(CandidatePool {
        user_id: String::new(),
        entries: order[..k]
            .iter()
            .enumerate()
            .map(|(j, &i)| (items[i].id.clone(), 1.0 - j as f64 / k as f64))
            .collect(),
        pool_size: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Item;

    fn catalog(pops: &[(&str, u64)]) -> Catalog {
        Catalog::from_items(
            pops.iter()
                .map(|(id, p)| Item::new(*id, *id, None, vec![], vec![], *p))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn popularity_order() {
        let c = catalog(&[("a", 5), ("b", 9), ("c", 1)]);
        let pool = popularity_topk(&c, 2).unwrap();
        assert_eq!(pool.item_ids().collect::<Vec<_>>(), vec!["b", "a"]);
    }

    #[test]
    fn popularity_ties_by_id() {
        let c = catalog(&[("d", 2), ("b", 2), ("a", 2), ("c", 2)]);
        let pool = popularity_topk(&c, 3).unwrap();
        assert_eq!(pool.item_ids().collect::<Vec<_>>(), vec!["a", "b", "c"]);
    }

    #[test]
    fn random_full_draw_is_permutation() {
        let c = catalog(&[("a", 0), ("b", 0), ("c", 0), ("d", 0)]);
        let pool = random_topk(&c, 4, 9).unwrap();
        let mut ids: Vec<_> = pool.item_ids().collect();
        ids.sort_unstable();
        assert_eq!(ids, vec!["a", "b", "c", "d"]);
        pool.validate().unwrap();
    }

    #[test]
    fn random_is_deterministic() {
        let c = catalog(&[("a", 0), ("b", 0), ("c", 0), ("d", 0), ("e", 0)]);
        assert_eq!(random_topk(&c, 3, 11).unwrap(), random_topk(&c, 3, 11).unwrap());
        assert!(matches!(random_topk(&c, 6, 1), Err(Error::TooMany { .. })));
    }

    #[test]
    fn random_single_draw_is_uniform() {
        let ids: Vec<String> = (0..10).map(|i| format!("i{i}")).collect();
        let c = Catalog::from_items(
            ids.iter()
                .map(|id| Item::new(id.clone(), "t", None, vec![], vec![], 0))
                .collect(),
        )
        .unwrap();
        let draws = 100_000u64;
        let mut counts = [0u64; 10];
        for s in 0..draws {
            let pool = random_topk(&c, 1, crate::rng::derive_seed(5, &[s])).unwrap();
            counts[c.position(&pool.entries[0].0).unwrap()] += 1;
        }
        let expected = draws as f64 / 10.0;
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        let mut chi2 = 0.0;
        for &n in &counts {
            assert!((n as f64 - expected).abs() < 3.0 * sigma, "{counts:?}");
            chi2 += (n as f64 - expected).powi(2) / expected;
        }
        // 99.9th percentile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }
}
