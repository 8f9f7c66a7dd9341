//! Experiment orchestration: pipelines, multi-seed runs, ablations, logs and
//! aggregation.
//!
//! A run writes one JSONL file per (pipeline, seed) under `<out>/runs/`, a
//! `run_meta.json` describing the run, and `master.json` with the cross-seed
//! aggregates. [`aggregate_runs`] rebuilds the aggregates from those files
//! alone.
//!
//! Coverage (`recall@c`) is measured on the retriever's own ordering at depth
//! `c`, independently of `pool_size`; for the hybrid retriever it is the
//! union of the component top-`c` lists. HR and nDCG are measured on the final
//! top-K list.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, UserRecord};
use crate::config::Section;
use crate::error::{Error, Result};
use crate::metrics::{
    exposure_from_top1, ground_truth, gt_position_stats, hit_at_k, ndcg_at_k, recall_at_k,
    GtPositionStats, PerUserResult, RankedList, DEFAULT_CUTOFFS,
};
use crate::retrieval::{
    flat_search, full_ranking, hybrid_union, popularity_topk, random_topk, Bm25Index, Bm25Params, CandidatePool,
    EmbeddingSet,
};
use crate::rng::{derive_seed, label_hash, rng_from_seed, DEFAULT_SEEDS};
use crate::scoring::{
    ensemble_inputs, ensemble_pool_scores, rerank_with, CalibrationParams, EnsembleWeights, ScoreTable,
};
use crate::stats::{
    compare_paired, ols_simple, separation_from_labeled, RegressionFit, ScoreSeparationReport, StatTestReport,
};
use crate::synthgen::SyntheticWorld;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Random,
    Popularity,
    Vector,
    Bm25,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankerKind {
    /// Keep the pool order ("candidates only").
    None,
    ScoreTable,
    Synthetic,
    Ensemble,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),* }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $text),* }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($ty::$variant),)*
                    other => Err(Error::InvalidParameter(format!(
                        concat!("unknown ", stringify!($ty), " `{}` (expected one of: {})"),
                        other,
                        [$($text),*].join(", ")
                    ))),
                }
            }
        }
    };
}

text_enum!(RetrieverKind { Random => "random", Popularity => "popularity", Vector => "vector", Bm25 => "bm25", Hybrid => "hybrid" });
text_enum!(RerankerKind { None => "none", ScoreTable => "score_table", Synthetic => "synthetic", Ensemble => "ensemble" });

/// Where the ensemble takes its cross-encoder component from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeSource {
    /// The synthetic scorer when a world is loaded, else the score table.
    Auto,
    ScoreTable,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub name: String,
    pub retriever: RetrieverKind,
    pub reranker: RerankerKind,
    pub pool_size: usize,
    pub k: usize,
    pub calibration: Option<CalibrationParams>,
    pub ensemble_weights: Option<EnsembleWeights>,
    /// Min-max scale ensemble components per pool before weighting.
    pub ensemble_normalize: bool,
    pub ensemble_ce: CeSource,
    /// Adds the popularity list as a third hybrid component.
    pub hybrid_popularity: bool,
    pub bm25: Bm25Params,
}

pub const DEFAULT_K: usize = 10;

const PIPELINE_KEYS: [&str; 15] = [
    "retriever",
    "reranker",
    "pool_size",
    "k",
    "temperature",
    "platt_a",
    "platt_b",
    "alpha",
    "beta",
    "gamma",
    "normalize",
    "ensemble_ce",
    "hybrid_popularity",
    "bm25_k1",
    "bm25_b",
];

impl PipelineConfig {
    pub fn new(name: impl Into<String>, retriever: RetrieverKind, reranker: RerankerKind, pool_size: usize) -> Self {
        PipelineConfig {
            name: name.into(),
            retriever,
            reranker,
            pool_size,
            k: DEFAULT_K,
            calibration: None,
            ensemble_weights: None,
            ensemble_normalize: false,
            ensemble_ce: CeSource::Auto,
            hybrid_popularity: false,
            bm25: Bm25Params::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let name_ok = !self.name.is_empty()
            && self.name != "meta"
            && !self.name.contains("__")
            && self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "_-.@+".contains(c));
        if !name_ok {
            return bad(format!(
                "pipeline name `{}` must be non-empty ASCII letters, digits or _-.@+, without `__`, and not `meta`",
                self.name
            ));
        }
        if self.k == 0 {
            return bad(format!("pipeline `{}`: k must be at least 1", self.name));
        }
        if self.pool_size < self.k {
            return bad(format!(
                "pipeline `{}`: pool_size {} is smaller than k {}",
                self.name, self.pool_size, self.k
            ));
        }
        if let Some(c) = &self.calibration {
            c.validate()?;
        }
        if let Some(w) = &self.ensemble_weights {
            w.validate()?;
        }
        self.bm25.validate()
    }

    /// Reads a `[pipeline <name>]` section.
    pub fn from_section(section: &Section, path: &Path) -> Result<Self> {
        section.check_keys(path, &PIPELINE_KEYS)?;
        let name = section
            .name
            .clone()
            .ok_or_else(|| Error::parse(path, section.line, "pipeline section needs a name"))?;
        let retriever: RetrieverKind = section
            .parse_opt(path, "retriever")?
            .ok_or_else(|| Error::parse(path, section.line, format!("pipeline `{name}` has no retriever")))?;
        let reranker = section.parse_opt(path, "reranker")?.unwrap_or(RerankerKind::None);
        let k = section.parse_opt(path, "k")?.unwrap_or(DEFAULT_K);
        let pool_size = section.parse_opt(path, "pool_size")?.unwrap_or(k);
        let mut p = PipelineConfig::new(name, retriever, reranker, pool_size);
        p.k = k;
        let t: Option<f64> = section.parse_opt(path, "temperature")?;
        let a: Option<f64> = section.parse_opt(path, "platt_a")?;
        let b: Option<f64> = section.parse_opt(path, "platt_b")?;
        if t.is_some() || a.is_some() || b.is_some() {
            let d = CalibrationParams::default();
            p.calibration = Some(CalibrationParams {
                temperature: t.unwrap_or(d.temperature),
                platt_a: a.unwrap_or(d.platt_a),
                platt_b: b.unwrap_or(d.platt_b),
            });
        }
        let alpha: Option<f64> = section.parse_opt(path, "alpha")?;
        let beta: Option<f64> = section.parse_opt(path, "beta")?;
        let gamma: Option<f64> = section.parse_opt(path, "gamma")?;
        if alpha.is_some() || beta.is_some() || gamma.is_some() {
            let d = EnsembleWeights::default();
            p.ensemble_weights = Some(EnsembleWeights {
                alpha: alpha.unwrap_or(d.alpha),
                beta: beta.unwrap_or(d.beta),
                gamma: gamma.unwrap_or(d.gamma),
            });
        }
        p.ensemble_normalize = section.parse_opt(path, "normalize")?.unwrap_or(false);
        p.ensemble_ce = match section.get("ensemble_ce").map(|e| e.value.as_str()) {
            None | Some("auto") => CeSource::Auto,
            Some("score_table") => CeSource::ScoreTable,
            Some("synthetic") => CeSource::Synthetic,
            Some(other) => {
                let line = section.get("ensemble_ce").map_or(section.line, |e| e.line);
                return Err(Error::parse(path, line, format!("unknown ensemble_ce `{other}`")));
            }
        };
        p.hybrid_popularity = section.parse_opt(path, "hybrid_popularity")?.unwrap_or(false);
        let d = Bm25Params::default();
        p.bm25 = Bm25Params {
            k1: section.parse_opt(path, "bm25_k1")?.unwrap_or(d.k1),
            b: section.parse_opt(path, "bm25_b")?.unwrap_or(d.b),
        };
        p.validate()?;
        Ok(p)
    }

    fn needs_ce(&self) -> bool {
        matches!(
            self.reranker,
            RerankerKind::ScoreTable | RerankerKind::Synthetic | RerankerKind::Ensemble
        )
    }
}

/// The standard comparison set: random, popularity, embedding cosine
/// (vector retrieval at depth K, no rerank), candidates only (vector pool,
/// no rerank) and the reranked pipeline.
///
/// The reranked pipeline uses the synthetic scorer when `synthetic` is set,
/// otherwise the score table.
pub fn default_pipelines(pool_size: usize, k: usize, synthetic: bool) -> Vec<PipelineConfig> {
    let with_k = |mut p: PipelineConfig| {
        p.k = k;
        p
    };
    let reranker = if synthetic {
        RerankerKind::Synthetic
    } else {
        RerankerKind::ScoreTable
    };
    vec![
        with_k(PipelineConfig::new("random", RetrieverKind::Random, RerankerKind::None, k)),
        with_k(PipelineConfig::new("popularity", RetrieverKind::Popularity, RerankerKind::None, k)),
        with_k(PipelineConfig::new("embedding_cosine", RetrieverKind::Vector, RerankerKind::None, k)),
        with_k(PipelineConfig::new("candidates_only", RetrieverKind::Vector, RerankerKind::None, pool_size)),
        with_k(PipelineConfig::new("reranked", RetrieverKind::Vector, reranker, pool_size)),
    ]
}

/// Everything a pipeline may read.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub catalog: Catalog,
    pub users: Vec<UserRecord>,
    /// Item retrieval embeddings.
    pub embeddings: Option<EmbeddingSet>,
    /// User query embeddings keyed by user id.
    pub queries: Option<EmbeddingSet>,
    pub scores: Option<ScoreTable>,
    pub world: Option<SyntheticWorld>,
}

impl ExperimentData {
    pub fn from_world(world: SyntheticWorld) -> Self {
        ExperimentData {
            catalog: world.catalog.clone(),
            users: world.users.clone(),
            embeddings: Some(world.embeddings.clone()),
            queries: Some(world.queries.clone()),
            scores: None,
            world: Some(world),
        }
    }

    /// Checks that every input a pipeline needs is present and consistent.
    pub fn check_for(&self, p: &PipelineConfig) -> Result<()> {
        let missing = |what: &str| {
            Err(Error::InvalidParameter(format!(
                "pipeline `{}` needs {what}, which was not supplied",
                p.name
            )))
        };
        let vector = matches!(p.retriever, RetrieverKind::Vector | RetrieverKind::Hybrid)
            || p.reranker == RerankerKind::Ensemble;
        if vector {
            let (Some(emb), Some(q)) = (&self.embeddings, &self.queries) else {
                return missing("item embeddings and user query embeddings");
            };
            if emb.dim() != q.dim() {
                return Err(Error::DimensionMismatch {
                    expected: emb.dim(),
                    actual: q.dim(),
                });
            }
            if let Some(item) = self.catalog.items().iter().find(|i| emb.get(&i.id).is_none()) {
                return Err(Error::Inconsistent(format!("no embedding for catalog item `{}`", item.id)));
            }
            if emb.len() != self.catalog.len() {
                return Err(Error::Inconsistent(format!(
                    "embedding file has {} rows but the catalog has {} items",
                    emb.len(),
                    self.catalog.len()
                )));
            }
        }
        match self.ce_source(p) {
            Some(CeSource::ScoreTable) if self.scores.is_none() => return missing("a score file"),
            Some(CeSource::Synthetic) if self.world.is_none() => return missing("a synthetic world"),
            _ => {}
        }
        Ok(())
    }

    fn ce_source(&self, p: &PipelineConfig) -> Option<CeSource> {
        match p.reranker {
            RerankerKind::None => None,
            RerankerKind::ScoreTable => Some(CeSource::ScoreTable),
            RerankerKind::Synthetic => Some(CeSource::Synthetic),
            RerankerKind::Ensemble => Some(match p.ensemble_ce {
                CeSource::Auto if self.world.is_some() => CeSource::Synthetic,
                CeSource::Auto => CeSource::ScoreTable,
                other => other,
            }),
        }
    }
}

/// Uniform sample of `n` users without replacement, in sampling order.
pub fn sample_users(users: &[UserRecord], n: usize, seed: u64) -> Result<Vec<UserRecord>> {
    if n > users.len() {
        return Err(Error::TooMany {
            requested: n,
            available: users.len(),
        });
    }
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let mut idx: Vec<usize> = (0..users.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    Ok(idx[..n].iter().map(|&i| users[i].clone()).collect())
}

/// Per-user sub-seed for a pipeline within a seed.
pub fn user_seed(seed: u64, pipeline: &str, ordinal: usize) -> u64 {
    derive_seed(seed, &[label_hash(pipeline), ordinal as u64])
}

/// Shared per-run state that is independent of the user.
struct Prepared<'a> {
    data: &'a ExperimentData,
    bm25: Option<Bm25Index>,
    popularity: Option<CandidatePool>,
    cutoffs: Vec<usize>,
}

impl<'a> Prepared<'a> {
    fn new(data: &'a ExperimentData, pipelines: &[PipelineConfig], cutoffs: &[usize]) -> Result<Self> {
        let uses = |k: RetrieverKind| pipelines.iter().any(|p| p.retriever == k);
        let bm25 = if uses(RetrieverKind::Bm25) || uses(RetrieverKind::Hybrid) {
            Some(Bm25Index::build(&data.catalog)?)
        } else {
            None
        };
        let popularity = if uses(RetrieverKind::Popularity) || pipelines.iter().any(|p| p.hybrid_popularity) {
            Some(popularity_topk(&data.catalog, data.catalog.len())?)
        } else {
            None
        };
        Ok(Prepared {
            data,
            bm25,
            popularity,
            cutoffs: cutoffs.to_vec(),
        })
    }

    fn depth(&self, p: &PipelineConfig) -> usize {
        let max_cut = self.cutoffs.iter().copied().max().unwrap_or(0);
        p.pool_size.max(max_cut).min(self.data.catalog.len())
    }

    fn query(&self, user: &UserRecord) -> Result<&[f64]> {
        self.data
            .queries
            .as_ref()
            .and_then(|q| q.get(&user.id))
            .ok_or_else(|| Error::Inconsistent(format!("no query embedding for user `{}`", user.id)))
    }

    fn single(&self, kind: RetrieverKind, p: &PipelineConfig, user: &UserRecord, seed: u64, depth: usize) -> Result<CandidatePool> {
        let pool = match kind {
            RetrieverKind::Random => random_topk(&self.data.catalog, depth, seed)?,
            RetrieverKind::Popularity => self.popularity.as_ref().expect("prepared").truncated(depth),
            RetrieverKind::Vector => {
                flat_search(self.query(user)?, self.data.embeddings.as_ref().expect("checked"), depth)?
            }
            RetrieverKind::Bm25 => self.bm25.as_ref().expect("prepared").search(&user.profile_text, p.bm25, depth)?,
            RetrieverKind::Hybrid => unreachable!("hybrid is composed from single retrievers"),
        };
        Ok(pool.for_user(user.id.clone()))
    }

    /// Returns the reranking pool and the coverage at each cutoff.
    fn retrieve(&self, p: &PipelineConfig, user: &UserRecord, seed: u64) -> Result<(CandidatePool, BTreeMap<usize, f64>)> {
        let depth = self.depth(p);
        let gt = &user.gt_items;
        if p.retriever != RetrieverKind::Hybrid {
            let ordering = self.single(p.retriever, p, user, seed, depth)?;
            let coverage = self
                .cutoffs
                .iter()
                .filter_map(|&c| recall_at_k(ordering.item_ids(), gt, c).map(|r| (c, r)))
                .collect();
            return Ok((ordering.truncated(p.pool_size), coverage));
        }
        let mut kinds = vec![RetrieverKind::Vector, RetrieverKind::Bm25];
        if p.hybrid_popularity {
            kinds.push(RetrieverKind::Popularity);
        }
        let components = kinds
            .into_iter()
            .map(|k| self.single(k, p, user, seed, depth))
            .collect::<Result<Vec<_>>>()?;
        let mut coverage = BTreeMap::new();
        if !gt.is_empty() {
            for &c in &self.cutoffs {
                let union: BTreeSet<&str> = components.iter().flat_map(|pool| pool.item_ids().take(c)).collect();
                let found = gt.iter().filter(|g| union.contains(g.as_str())).count();
                coverage.insert(c, found as f64 / gt.len() as f64);
            }
        }
        let pools: Vec<CandidatePool> = components.iter().map(|c| c.truncated(p.pool_size)).collect();
        let total = pools.iter().map(CandidatePool::len).sum();
        Ok((hybrid_union(&pools, total)?, coverage))
    }

    fn ce_score(&self, p: &PipelineConfig, user: &UserRecord, item: &str) -> Result<f64> {
        let raw = match self.data.ce_source(p).expect("reranking pipeline") {
            CeSource::Synthetic => self.data.world.as_ref().expect("checked").score(&user.id, item)?,
            _ => self.data.scores.as_ref().expect("checked").require(&user.id, item)?,
        };
        Ok(match &p.calibration {
            Some(c) => c.apply(raw),
            None => raw,
        })
    }

    fn rerank(&self, p: &PipelineConfig, user: &UserRecord, pool: &CandidatePool) -> Result<RankedList> {
        match p.reranker {
            RerankerKind::None => Ok(RankedList {
                user_id: pool.user_id.clone(),
                entries: pool.entries.iter().take(p.k).cloned().collect(),
                k: p.k,
            }),
            RerankerKind::ScoreTable | RerankerKind::Synthetic => {
                rerank_with(pool, p.k, |item| self.ce_score(p, user, item))
            }
            RerankerKind::Ensemble => {
                let query = self.query(user)?;
                let emb = self.data.embeddings.as_ref().expect("checked");
                let inputs = ensemble_inputs(
                    pool,
                    &self.data.catalog,
                    |item| self.ce_score(p, user, item),
                    |item| {
                        let v = emb.get(item).ok_or_else(|| Error::UnknownId(item.to_string()))?;
                        Ok(crate::retrieval::embeddings::dot(query, v))
                    },
                )?;
                let scores = ensemble_pool_scores(
                    &inputs,
                    p.ensemble_weights.unwrap_or_default(),
                    p.ensemble_normalize,
                );
                let by_id: HashMap<&str, f64> = pool.item_ids().zip(scores).collect();
                rerank_with(pool, p.k, |item| Ok(by_id[item]))
            }
        }
    }

    fn run_user(&self, p: &PipelineConfig, user: &UserRecord, seed: u64) -> Result<(PerUserResult, CandidatePool, RankedList)> {
        let (pool, recall) = self.retrieve(p, user, seed)?;
        let start = Instant::now();
        let list = self.rerank(p, user, &pool)?;
        let rerank_seconds = start.elapsed().as_secs_f64();
        let result = PerUserResult {
            user_id: user.id.clone(),
            hit: u8::from(hit_at_k(list.item_ids(), &user.gt_items, p.k)),
            ndcg: ndcg_at_k(list.item_ids(), &user.gt_items, p.k),
            recall,
            top1: list.top1().map(String::from),
            rerank_seconds,
        };
        Ok((result, pool, list))
    }
}

/// Output of one pipeline over one user sample.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub results: Vec<PerUserResult>,
    pub pools: Vec<CandidatePool>,
    pub lists: Vec<RankedList>,
}

/// Runs one pipeline for the given users (in parallel; output in input order).
pub fn run_pipeline(p: &PipelineConfig, users: &[UserRecord], data: &ExperimentData, seed: u64) -> Result<PipelineRun> {
    run_pipeline_with(p, users, data, seed, &DEFAULT_CUTOFFS)
}

pub fn run_pipeline_with(
    p: &PipelineConfig,
    users: &[UserRecord],
    data: &ExperimentData,
    seed: u64,
    cutoffs: &[usize],
) -> Result<PipelineRun> {
    p.validate()?;
    data.check_for(p)?;
    let prepared = Prepared::new(data, std::slice::from_ref(p), cutoffs)?;
    run_prepared(&prepared, p, users, seed)
}

fn run_prepared(prepared: &Prepared<'_>, p: &PipelineConfig, users: &[UserRecord], seed: u64) -> Result<PipelineRun> {
    let out: Vec<(PerUserResult, CandidatePool, RankedList)> = users
        .par_iter()
        .enumerate()
        .map(|(ordinal, user)| prepared.run_user(p, user, user_seed(seed, &p.name, ordinal)))
        .collect::<Result<_>>()?;
    let mut run = PipelineRun {
        results: Vec::with_capacity(out.len()),
        pools: Vec::with_capacity(out.len()),
        lists: Vec::with_capacity(out.len()),
    };
    for (r, pool, list) in out {
        run.results.push(r);
        run.pools.push(pool);
        run.lists.push(list);
    }
    Ok(run)
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub n_users: usize,
    pub seeds: Vec<u64>,
    pub pipelines: Vec<PipelineConfig>,
    pub pool_sizes_ablation: Option<Vec<usize>>,
    pub output_dir: PathBuf,
    pub cutoffs: Vec<usize>,
}

impl RunSpec {
    pub fn new(n_users: usize, pipelines: Vec<PipelineConfig>, output_dir: impl Into<PathBuf>) -> Self {
        RunSpec {
            n_users,
            seeds: DEFAULT_SEEDS.to_vec(),
            pipelines,
            pool_sizes_ablation: None,
            output_dir: output_dir.into(),
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        if self.n_users == 0 {
            return Err(Error::InvalidParameter("n_users must be at least 1".into()));
        }
        if self.pipelines.is_empty() {
            return Err(Error::InvalidParameter("no pipelines configured".into()));
        }
        if self.cutoffs.contains(&0) {
            return Err(Error::InvalidParameter("recall cutoffs must be positive".into()));
        }
        let mut names = BTreeSet::new();
        for p in &self.pipelines {
            p.validate()?;
            if !names.insert(p.name.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate pipeline name `{}`", p.name)));
            }
        }
        let mut seeds = BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seeds.insert(**s)) {
            return Err(Error::InvalidParameter(format!("duplicate seed {s}")));
        }
        if let Some(sizes) = &self.pool_sizes_ablation {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Error::InvalidParameter("ablation pool sizes must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Mean and (for two or more seeds) sample sd of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: Option<f64>,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.len() >= 2).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        MetricSummary { mean, sd }
    }
}

/// Description of a finished run, stored as `run_meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seeds: Vec<u64>,
    pub n_users: usize,
    pub cutoffs: Vec<usize>,
    pub pipelines: Vec<PipelineConfig>,
}

impl RunMeta {
    pub fn pipeline(&self, name: &str) -> Option<&PipelineConfig> {
        self.pipelines.iter().find(|p| p.name == name)
    }
}

/// Cross-seed aggregates plus the per-seed values they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    /// pipeline → metric → summary.
    pub metrics: BTreeMap<String, BTreeMap<String, MetricSummary>>,
    /// pipeline → seed → metric → value.
    pub per_seed: BTreeMap<String, BTreeMap<u64, BTreeMap<String, f64>>>,
    /// pipeline → seed → top-1 item → count.
    pub top1: BTreeMap<String, BTreeMap<u64, BTreeMap<String, u64>>>,
    pub logs: Vec<PathBuf>,
    pub meta: RunMeta,
}

pub fn hr_key(k: usize) -> String {
    format!("hr@{k}")
}

pub fn ndcg_key(k: usize) -> String {
    format!("ndcg@{k}")
}

pub fn recall_key(c: usize) -> String {
    format!("recall@{c}")
}

pub const UNIQUE_TOP1: &str = "unique_top1";
pub const GINI: &str = "gini";
pub const RERANK_SECONDS: &str = "rerank_seconds";

/// Metrics of one (pipeline, seed) log.
pub fn seed_metrics(results: &[PerUserResult], k: usize, cutoffs: &[usize]) -> Result<BTreeMap<String, f64>> {
    if results.is_empty() {
        return Err(Error::EmptyInput("a run with zero users"));
    }
    let n = results.len() as f64;
    let mut m = BTreeMap::new();
    m.insert(hr_key(k), results.iter().map(|r| f64::from(r.hit)).sum::<f64>() / n);
    m.insert(ndcg_key(k), results.iter().map(|r| r.ndcg).sum::<f64>() / n);
    for &c in cutoffs {
        let vals: Vec<f64> = results.iter().filter_map(|r| r.recall.get(&c).copied()).collect();
        let mean = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
        m.insert(recall_key(c), mean);
    }
    let exposure = exposure_from_top1(results.iter().map(|r| r.top1.as_deref()));
    m.insert(UNIQUE_TOP1.into(), exposure.unique_top1 as f64);
    m.insert(GINI.into(), exposure.gini);
    m.insert(RERANK_SECONDS.into(), results.iter().map(|r| r.rerank_seconds).sum::<f64>() / n);
    Ok(m)
}

fn top1_counts(results: &[PerUserResult]) -> BTreeMap<String, u64> {
    let mut h = BTreeMap::new();
    for id in results.iter().filter_map(|r| r.top1.as_ref()) {
        *h.entry(id.clone()).or_insert(0) += 1;
    }
    h
}

pub const RUNS_DIR: &str = "runs";
pub const RUN_META: &str = "run_meta.json";
pub const MASTER: &str = "master.json";

pub fn log_path(out: &Path, pipeline: &str, seed: u64) -> PathBuf {
    out.join(RUNS_DIR).join(format!("{pipeline}__seed{seed}.jsonl"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Inconsistent(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

pub fn write_user_log(path: &Path, results: &[PerUserResult]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    for r in results {
        serde_json::to_writer(&mut out, r).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_user_log(path: &Path) -> Result<Vec<PerUserResult>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Master JSON: `{pipeline: {metric: {mean, sd}}, meta: {...}}`.
pub fn master_json(agg: &AggregateResult) -> serde_json::Value {
    let mut root = serde_json::Map::new();
    for (name, metrics) in &agg.metrics {
        root.insert(name.clone(), serde_json::to_value(metrics).expect("plain data"));
    }
    let pool_size: BTreeMap<&str, usize> = agg.meta.pipelines.iter().map(|p| (p.name.as_str(), p.pool_size)).collect();
    root.insert(
        "meta".into(),
        serde_json::json!({
            "seeds": agg.meta.seeds,
            "n_users": agg.meta.n_users,
            "pool_size": pool_size,
            "cutoffs": agg.meta.cutoffs,
        }),
    );
    serde_json::Value::Object(root)
}

fn aggregate(meta: RunMeta, logs: Vec<PathBuf>, runs: BTreeMap<String, BTreeMap<u64, Vec<PerUserResult>>>) -> Result<AggregateResult> {
    let mut agg = AggregateResult {
        metrics: BTreeMap::new(),
        per_seed: BTreeMap::new(),
        top1: BTreeMap::new(),
        logs,
        meta,
    };
    for (name, by_seed) in runs {
        let k = agg.meta.pipeline(&name).map_or(DEFAULT_K, |p| p.k);
        let mut per_seed = BTreeMap::new();
        let mut top1 = BTreeMap::new();
        for (seed, results) in by_seed {
            per_seed.insert(seed, seed_metrics(&results, k, &agg.meta.cutoffs)?);
            top1.insert(seed, top1_counts(&results));
        }
        let keys: Vec<String> = per_seed.values().next().map(|m: &BTreeMap<String, f64>| m.keys().cloned().collect()).unwrap_or_default();
        let summary = keys
            .into_iter()
            .map(|key| {
                let vals: Vec<f64> = per_seed.values().map(|m| m[&key]).collect();
                (key, MetricSummary::from_values(&vals))
            })
            .collect();
        agg.metrics.insert(name.clone(), summary);
        agg.per_seed.insert(name.clone(), per_seed);
        agg.top1.insert(name, top1);
    }
    Ok(agg)
}

fn run_all(spec: &RunSpec, data: &ExperimentData) -> Result<AggregateResult> {
    spec.validate()?;
    for p in &spec.pipelines {
        data.check_for(p)?;
    }
    let prepared = Prepared::new(data, &spec.pipelines, &spec.cutoffs)?;
    let mut runs: BTreeMap<String, BTreeMap<u64, Vec<PerUserResult>>> = BTreeMap::new();
    let mut logs = Vec::new();
    for &seed in &spec.seeds {
        let users = sample_users(&data.users, spec.n_users, seed)?;
        for p in &spec.pipelines {
            let run = run_prepared(&prepared, p, &users, seed)?;
            let path = log_path(&spec.output_dir, &p.name, seed);
            write_user_log(&path, &run.results)?;
            logs.push(path);
            runs.entry(p.name.clone()).or_default().insert(seed, run.results);
        }
    }
    let meta = RunMeta {
        seeds: spec.seeds.clone(),
        n_users: spec.n_users,
        cutoffs: spec.cutoffs.clone(),
        pipelines: spec.pipelines.clone(),
    };
    write_json(&spec.output_dir.join(RUN_META), &meta)?;
    let agg = aggregate(meta, logs, runs)?;
    write_json(&spec.output_dir.join(MASTER), &master_json(&agg))?;
    Ok(agg)
}

/// Runs every pipeline for every seed, writing logs, `run_meta.json` and
/// `master.json` under the output directory.
pub fn run_experiment(spec: &RunSpec, data: &ExperimentData) -> Result<AggregateResult> {
    run_all(spec, data)
}

/// Rebuilds the aggregates of a finished run from its directory.
pub fn aggregate_runs(dir: &Path) -> Result<AggregateResult> {
    let meta: RunMeta = read_json(&dir.join(RUN_META))?;
    let mut runs: BTreeMap<String, BTreeMap<u64, Vec<PerUserResult>>> = BTreeMap::new();
    let mut logs = Vec::new();
    for p in &meta.pipelines {
        for &seed in &meta.seeds {
            let path = log_path(dir, &p.name, seed);
            if !path.exists() {
                return Err(Error::Inconsistent(format!(
                    "pipeline `{}` has no log for seed {seed} ({})",
                    p.name,
                    path.display()
                )));
            }
            runs.entry(p.name.clone()).or_default().insert(seed, read_user_log(&path)?);
            logs.push(path);
        }
    }
    let runs_dir = dir.join(RUNS_DIR);
    let listed = std::fs::read_dir(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    for entry in listed {
        let path = entry.map_err(|e| Error::io(&runs_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "jsonl") && !logs.contains(&path) {
            return Err(Error::Inconsistent(format!(
                "log {} does not belong to any configured (pipeline, seed)",
                path.display()
            )));
        }
    }
    aggregate(meta, logs, runs)
}

/// One row of the pool-size study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pool_size: usize,
    pub hr: MetricSummary,
    pub ndcg: MetricSummary,
    pub rerank_seconds: MetricSummary,
}

pub const ABLATION_CSV: &str = "ablation.csv";
/// Sub-run directory holding the ablation's own logs and aggregates, so an
/// ablation never disturbs a main run in the same output directory.
pub const ABLATION_DIR: &str = "ablation";

/// Reruns each reranking pipeline of `spec` at every ablation pool size.
///
/// Pipelines are renamed `<name>@<pool_size>` and logged under
/// [`ABLATION_DIR`]; the returned rows are keyed by the original name and
/// also written to `ablation.csv` in the output directory.
pub fn run_ablation(spec: &RunSpec, data: &ExperimentData) -> Result<BTreeMap<String, Vec<AblationRow>>> {
    let sizes = spec
        .pool_sizes_ablation
        .clone()
        .ok_or_else(|| Error::InvalidParameter("no ablation pool sizes given".into()))?;
    let base: Vec<&PipelineConfig> = spec.pipelines.iter().filter(|p| p.needs_ce()).collect();
    if base.is_empty() {
        return Err(Error::InvalidParameter("ablation needs at least one reranking pipeline".into()));
    }
    let mut pipelines = Vec::new();
    for p in &base {
        for &size in &sizes {
            let mut q = (*p).clone();
            q.name = format!("{}@{size}", p.name);
            q.pool_size = size;
            pipelines.push(q);
        }
    }
    let expanded = RunSpec {
        pipelines,
        output_dir: spec.output_dir.join(ABLATION_DIR),
        ..spec.clone()
    };
    let agg = run_all(&expanded, data)?;
    let mut table = BTreeMap::new();
    for p in base {
        let rows = sizes
            .iter()
            .map(|&size| {
                let m = &agg.metrics[&format!("{}@{size}", p.name)];
                AblationRow {
                    pool_size: size,
                    hr: m[&hr_key(p.k)],
                    ndcg: m[&ndcg_key(p.k)],
                    rerank_seconds: m[RERANK_SECONDS],
                }
            })
            .collect();
        table.insert(p.name.clone(), rows);
    }
    write_ablation_csv(&spec.output_dir.join(ABLATION_CSV), &table)?;
    Ok(table)
}

fn write_ablation_csv(path: &Path, table: &BTreeMap<String, Vec<AblationRow>>) -> Result<()> {
    let mut text = String::from("pipeline,pool_size,hr_mean,hr_sd,ndcg_mean,ndcg_sd,rerank_seconds_mean,rerank_seconds_sd\n");
    let sd = |s: Option<f64>| s.map(|v| v.to_string()).unwrap_or_default();
    for (name, rows) in table {
        for r in rows {
            text.push_str(&format!(
                "{name},{},{},{},{},{},{},{}\n",
                r.pool_size,
                r.hr.mean,
                sd(r.hr.sd),
                r.ndcg.mean,
                sd(r.ndcg.sd),
                r.rerank_seconds.mean,
                sd(r.rerank_seconds.sd)
            ));
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_ablation_csv(path: &Path) -> Result<BTreeMap<String, Vec<AblationRow>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let mut table: BTreeMap<String, Vec<AblationRow>> = BTreeMap::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, idx + 2, e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::parse(path, idx + 2, format!("bad number `{}`", field(i))))
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if field(i).is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let row = AblationRow {
            pool_size: field(1)
                .parse()
                .map_err(|_| Error::parse(path, idx + 2, "bad pool size"))?,
            hr: MetricSummary { mean: num(2)?, sd: opt(3)? },
            ndcg: MetricSummary { mean: num(4)?, sd: opt(5)? },
            rerank_seconds: MetricSummary { mean: num(6)?, sd: opt(7)? },
        };
        table.entry(field(0).to_string()).or_default().push(row);
    }
    Ok(table)
}

/// A pairwise comparison between two pipelines on one per-user metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub report: StatTestReport,
}

pub const STAT_TESTS: &str = "stat_tests.json";

/// Paired per-user values of `metric` ("hit" or "ndcg"), matched on
/// (seed, user) and pooled across seeds.
pub fn paired_values(dir: &Path, meta: &RunMeta, a: &str, b: &str, metric: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let pick = |r: &PerUserResult| -> Result<f64> {
        match metric {
            "hit" => Ok(f64::from(r.hit)),
            "ndcg" => Ok(r.ndcg),
            other => Err(Error::InvalidParameter(format!("unknown per-user metric `{other}`"))),
        }
    };
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &seed in &meta.seeds {
        let la = read_user_log(&log_path(dir, a, seed))?;
        let lb = read_user_log(&log_path(dir, b, seed))?;
        let by_user: HashMap<&str, &PerUserResult> = lb.iter().map(|r| (r.user_id.as_str(), r)).collect();
        if by_user.len() != la.len() {
            return Err(Error::Inconsistent(format!("`{a}` and `{b}` cover different users at seed {seed}")));
        }
        for r in &la {
            let other = by_user
                .get(r.user_id.as_str())
                .ok_or_else(|| Error::Inconsistent(format!("user `{}` missing from `{b}` at seed {seed}", r.user_id)))?;
            xs.push(pick(r)?);
            ys.push(pick(other)?);
        }
    }
    Ok((xs, ys))
}

/// Results of `analyze` over a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub tests: Vec<PairwiseTest>,
    /// HR@K regressed on recall@`coverage_cutoff` across pipelines, when
    /// there are at least three pipelines with non-constant coverage.
    pub coverage_regression: Option<RegressionFit>,
    pub coverage_cutoff: usize,
}

/// Pairwise tests between all pipelines (on hit and nDCG) and the
/// coverage-quality regression. Writes `stat_tests.json`.
pub fn analyze_runs(dir: &Path, resamples: usize, seed: u64) -> Result<Analysis> {
    let agg = aggregate_runs(dir)?;
    let names: Vec<&str> = agg.meta.pipelines.iter().map(|p| p.name.as_str()).collect();
    let mut tests = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            for metric in ["hit", "ndcg"] {
                let (x, y) = paired_values(dir, &agg.meta, a, b, metric)?;
                let report = compare_paired(&x, &y, resamples, derive_seed(seed, &[label_hash(a), label_hash(b)]))?;
                tests.push(PairwiseTest {
                    a: a.to_string(),
                    b: b.to_string(),
                    metric: metric.into(),
                    report,
                });
            }
        }
    }
    let cutoff = if agg.meta.cutoffs.contains(&200) {
        200
    } else {
        agg.meta.cutoffs.first().copied().unwrap_or(200)
    };
    let (xs, ys): (Vec<f64>, Vec<f64>) = agg
        .meta
        .pipelines
        .iter()
        .map(|p| {
            let m = &agg.metrics[&p.name];
            (m[&recall_key(cutoff)].mean, m[&hr_key(p.k)].mean)
        })
        .unzip();
    let coverage_regression = ols_simple(&xs, &ys).ok();
    let analysis = Analysis {
        tests,
        coverage_regression,
        coverage_cutoff: cutoff,
    };
    write_json(&dir.join(STAT_TESTS), &analysis)?;
    Ok(analysis)
}

pub fn load_analysis(dir: &Path) -> Result<Analysis> {
    read_json(&dir.join(STAT_TESTS))
}

/// Score-distribution and GT-position diagnostics that need the inputs, not
/// just the logs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataAnalysis {
    pub separation: Option<ScoreSeparationReport>,
    #[serde(skip)]
    pub relevant_scores: Vec<f64>,
    #[serde(skip)]
    pub irrelevant_scores: Vec<f64>,
    pub gt_positions: Option<GtPositionStats>,
}

pub const SEPARATION: &str = "separation.json";
pub const GT_POSITIONS: &str = "gt_positions.json";
pub const GT_POSITION_BINS: usize = 50;

/// Analyzes the users of the first seed's sample.
///
/// Score separation uses every scored pair of the score file for those users,
/// or, for a synthetic world, each user's exact-cosine pool at the largest
/// reranking pool size of the run. GT positions use full exact-cosine
/// rankings and need embeddings and queries.
pub fn analyze_data(meta: &RunMeta, data: &ExperimentData) -> Result<DataAnalysis> {
    let seed = *meta.seeds.first().ok_or(Error::EmptyInput("run without seeds"))?;
    let users = sample_users(&data.users, meta.n_users, seed)?;
    let gt = ground_truth(&users);
    let mut labeled = Vec::new();
    if let Some(world) = &data.world {
        let depth = meta
            .pipelines
            .iter()
            .filter(|p| p.needs_ce())
            .map(|p| p.pool_size)
            .max()
            .unwrap_or(200)
            .min(world.catalog.len());
        for user in &users {
            let q = world.queries.get(&user.id).ok_or_else(|| Error::UnknownId(user.id.clone()))?;
            for id in flat_search(q, &world.embeddings, depth)?.item_ids() {
                labeled.push((world.score(&user.id, id)?, user.gt_items.contains(id)));
            }
        }
    } else if let Some(scores) = &data.scores {
        for user in &users {
            if let Some(pool) = scores.pool_for(&user.id) {
                for (id, s) in &pool.entries {
                    labeled.push((*s, user.gt_items.contains(id)));
                }
            }
        }
    }
    let separation = if labeled.is_empty() {
        None
    } else {
        Some(separation_from_labeled(&labeled)?)
    };
    let (rel, irr): (Vec<(f64, bool)>, Vec<(f64, bool)>) = labeled.into_iter().partition(|p| p.1);
    let gt_positions = match (&data.embeddings, &data.queries) {
        (Some(emb), Some(queries)) => {
            let orderings = users
                .par_iter()
                .map(|u| {
                    let q = queries.get(&u.id).ok_or_else(|| Error::UnknownId(u.id.clone()))?;
                    Ok(full_ranking(q, emb)?.for_user(u.id.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(gt_position_stats(&orderings, &gt, &meta.cutoffs, GT_POSITION_BINS)?)
        }
        _ => None,
    };
    Ok(DataAnalysis {
        separation,
        relevant_scores: rel.into_iter().map(|p| p.0).collect(),
        irrelevant_scores: irr.into_iter().map(|p| p.0).collect(),
        gt_positions,
    })
}

/// Loads `run_meta.json`.
pub fn load_meta(dir: &Path) -> Result<RunMeta> {
    read_json(&dir.join(RUN_META))
}

/// Writes `separation.json` and `gt_positions.json` for the parts present.
pub fn write_data_analysis(dir: &Path, analysis: &DataAnalysis) -> Result<()> {
    if let Some(s) = &analysis.separation {
        write_json(&dir.join(SEPARATION), s)?;
    }
    if let Some(g) = &analysis.gt_positions {
        write_json(&dir.join(GT_POSITIONS), g)?;
    }
    Ok(())
}
