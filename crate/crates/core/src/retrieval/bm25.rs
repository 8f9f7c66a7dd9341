use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{rank_order, top_k_in_place, CandidatePool};
use crate::catalog::{build_item_profile, Catalog, DEFAULT_MAX_TAGS};
use crate::error::{Error, Result};

/// Okapi BM25 parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidParameter(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidParameter(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Lowercased whitespace tokens. No stemming.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Inverted index over item profile texts.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_len: f64,
    /// term -> (doc, term frequency), docs ascending.
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build(catalog: &Catalog) -> Result<Self> {
        Self::from_documents(
            catalog
                .items()
                .iter()
                .map(|item| (item.id.clone(), build_item_profile(item, DEFAULT_MAX_TAGS))),
        )
    }

    pub fn from_documents<I>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        for (doc, (id, text)) in docs.into_iter().enumerate() {
            let mut tf: HashMap<String, u32> = HashMap::new();
            let mut len = 0u32;
            for tok in tokenize(&text) {
                *tf.entry(tok).or_default() += 1;
                len += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((doc as u32, count));
            }
            ids.push(id);
            doc_len.push(len);
        }
        if ids.is_empty() {
            return Err(Error::EmptyIndex);
        }
        for list in postings.values_mut() {
            list.sort_unstable();
        }
        let avg_len = doc_len.iter().map(|&l| f64::from(l)).sum::<f64>() / ids.len() as f64;
        Ok(Bm25Index {
            ids,
            doc_len,
            avg_len,
            postings,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.ids.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Top-`k` documents sharing at least one term with the query.
    pub fn search(&self, query_text: &str, params: Bm25Params, k: usize) -> Result<CandidatePool> {
        params.validate()?;
        let mut terms: Vec<String> = tokenize(query_text).collect();
        terms.sort_unstable();
        terms.dedup();

        let mut scores = vec![0.0f64; self.ids.len()];
        let mut touched = vec![false; self.ids.len()];
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(doc, tf) in list {
                let doc = doc as usize;
                let tf = f64::from(tf);
                let len_norm = 1.0 - params.b + params.b * f64::from(self.doc_len[doc]) / self.avg_len;
                scores[doc] += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * len_norm);
                touched[doc] = true;
            }
        }
        let mut hits: Vec<(usize, f64)> = (0..self.ids.len())
            .filter(|&d| touched[d])
            .map(|d| (d, scores[d]))
            .collect();
        top_k_in_place(&mut hits, k, |a, b| {
        rank_order(a.1, &self.ids[a.0], b.1, &self.ids[b.0])
    });
        Ok(CandidatePool {
            user_id: String::new(),
            entries: hits
                .into_iter()
                .map(|(d, s)| (self.ids[d].clone(), s))
                .collect(),
            pool_size: k,
        })
    }
}

/// Builds an index over `catalog` and runs one query against it.
pub fn bm25_search(
    query_text: &str,
    catalog: &Catalog,
    params: Bm25Params,
    k: usize,
) -> Result<CandidatePool> {
    Bm25Index::build(catalog)?.search(query_text, params, k)
}
