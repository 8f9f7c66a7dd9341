//! Synthetic cold-start worlds.
//!
//! A world has latent item and user vectors on the unit sphere, Zipf
//! popularity counts, ground truth drawn from a popularity/affinity blend,
//! retrieval embeddings that carry a tunable share of the latent signal, and a
//! reranker whose score mixes true relevance, a fixed per-item bias, a
//! profile-length bias and unit Gaussian noise.
//!
//! Relevance of item `i` to user `u`:
//!
//! ```text
//! rel(u, i) = mix · pop(i) + (1 − mix) · <user_latent(u), item_latent(i)>
//! pop(i)    = ln(1 + count(i)) / ln(1 + total_interactions)
//! ```
//!
//! Ground truth is the top `gt_per_user` items by `rel / gt_temperature + G`
//! with `G` standard Gumbel noise, i.e. sampling without replacement with
//! probability proportional to `exp(rel / gt_temperature)`. A temperature of
//! 0 selects the exact top items by `rel`.
//!
//! All randomness comes from one ChaCha8 stream (generation order is fixed)
//! plus SplitMix64-hashed per-pair draws, so a seed fixes the world bit for bit.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::catalog::{build_item_profile, save_catalog, save_users, Catalog, CatalogFormat, Item, UserRecord, DEFAULT_MAX_TAGS};
use crate::config::{KvConfig, Section};
use crate::error::{Error, Result};
use crate::retrieval::{flat_search, save_embeddings, EmbeddingSet};
use crate::rng::{derive_seed, hashed_normal, rng_from_seed, splitmix64, unit_open, Rng as WorldRng};
use crate::scoring::ScoreTable;

const GT_STREAM: u64 = 0x6774;
const SCORER_STREAM: u64 = 0x7363;

/// Parameters of a synthetic world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub catalog_size: usize,
    pub user_count: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub zipf_exponent: f64,
    /// Share of the embedding built from the latent vector (rest is noise).
    pub alignment: f64,
    pub gt_per_user: usize,
    pub gt_popularity_mix: f64,
    pub gt_temperature: f64,
    pub scorer_signal: f64,
    pub scorer_item_bias: f64,
    pub scorer_length_bias: f64,
    /// Interactions drawn per item when assigning popularity counts.
    pub mean_popularity: usize,
    /// Pool depth of the exported score file.
    pub export_pool_size: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            catalog_size: 5000,
            user_count: 500,
            embed_dim: 384,
            latent_dim: 16,
            zipf_exponent: 1.0,
            alignment: 0.5,
            gt_per_user: 10,
            gt_popularity_mix: 0.0,
            gt_temperature: 0.05,
            scorer_signal: 1.0,
            scorer_item_bias: 0.0,
            scorer_length_bias: 0.0,
            mean_popularity: 20,
            export_pool_size: 1000,
            seed: 42,
        }
    }
}

const SPEC_KEYS: [&str; 15] = [
    "catalog_size",
    "user_count",
    "embed_dim",
    "latent_dim",
    "zipf_exponent",
    "alignment",
    "gt_per_user",
    "gt_popularity_mix",
    "gt_temperature",
    "scorer_signal",
    "scorer_item_bias",
    "scorer_length_bias",
    "mean_popularity",
    "export_pool_size",
    "seed",
];

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        for (name, v) in [
            ("catalog_size", self.catalog_size),
            ("user_count", self.user_count),
            ("embed_dim", self.embed_dim),
            ("latent_dim", self.latent_dim),
            ("gt_per_user", self.gt_per_user),
            ("mean_popularity", self.mean_popularity),
            ("export_pool_size", self.export_pool_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.latent_dim > self.embed_dim {
            return bad("latent_dim cannot exceed embed_dim".into());
        }
        if self.gt_per_user > self.catalog_size {
            return bad("gt_per_user cannot exceed catalog_size".into());
        }
        for (name, v) in [("alignment", self.alignment), ("gt_popularity_mix", self.gt_popularity_mix)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("zipf_exponent", self.zipf_exponent),
            ("gt_temperature", self.gt_temperature),
            ("scorer_signal", self.scorer_signal),
            ("scorer_item_bias", self.scorer_item_bias),
            ("scorer_length_bias", self.scorer_length_bias),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Reads the keys of `section`, starting from the defaults.
    pub fn from_section(section: &Section, path: &Path) -> Result<Self> {
        section.check_keys(path, &SPEC_KEYS)?;
        let mut s = WorldSpec::default();
        macro_rules! read {
            ($($field:ident),*) => {$(
                if let Some(v) = section.parse_opt(path, stringify!($field))? {
                    s.$field = v;
                }
            )*};
        }
        read!(
            catalog_size, user_count, embed_dim, latent_dim, zipf_exponent, alignment,
            gt_per_user, gt_popularity_mix, gt_temperature, scorer_signal, scorer_item_bias,
            scorer_length_bias, mean_popularity, export_pool_size, seed
        );
        s.validate()?;
        Ok(s)
    }

    /// Loads a spec from the `[world]` section of a config file, or from its
    /// root keys when there is no such section.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = KvConfig::load(path)?;
        let section = cfg.sections_of("world").next().unwrap_or(&cfg.root);
        Self::from_section(section, path)
    }

    /// The spec as a `[world]` config section; [`WorldSpec::load`] reads it back.
    pub fn to_config(&self) -> String {
        let mut out = String::from("[world]\n");
        let rows: [(&str, String); 15] = [
            ("catalog_size", self.catalog_size.to_string()),
            ("user_count", self.user_count.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("zipf_exponent", self.zipf_exponent.to_string()),
            ("alignment", self.alignment.to_string()),
            ("gt_per_user", self.gt_per_user.to_string()),
            ("gt_popularity_mix", self.gt_popularity_mix.to_string()),
            ("gt_temperature", self.gt_temperature.to_string()),
            ("scorer_signal", self.scorer_signal.to_string()),
            ("scorer_item_bias", self.scorer_item_bias.to_string()),
            ("scorer_length_bias", self.scorer_length_bias.to_string()),
            ("mean_popularity", self.mean_popularity.to_string()),
            ("export_pool_size", self.export_pool_size.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parameters of the synthetic reranker plus the latent state it reads.
#[derive(Debug, Clone)]
pub struct SyntheticScorer {
    latent_dim: usize,
    item_latent: Vec<f64>,
    user_latent: Vec<f64>,
    pop_score: Vec<f64>,
    /// Fixed per-item standard normal draw.
    pub item_bias: Vec<f64>,
    /// Profile token count over the catalog mean.
    pub length_score: Vec<f64>,
    mix: f64,
    signal: f64,
    bias_weight: f64,
    length_weight: f64,
    noise_seed: u64,
}

impl SyntheticScorer {
    pub fn relevance(&self, user: usize, item: usize) -> f64 {
        let d = self.latent_dim;
        let u = &self.user_latent[user * d..(user + 1) * d];
        let v = &self.item_latent[item * d..(item + 1) * d];
        let affinity: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        self.mix * self.pop_score[item] + (1.0 - self.mix) * affinity
    }

    pub fn noise(&self, user: usize, item: usize) -> f64 {
        hashed_normal(derive_seed(self.noise_seed, &[user as u64, item as u64]))
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        self.signal * self.relevance(user, item)
            + self.bias_weight * self.item_bias[item]
            + self.length_weight * self.length_score[item]
            + self.noise(user, item)
    }
}

/// A generated world. Immutable once built.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    pub catalog: Catalog,
    pub users: Vec<UserRecord>,
    /// Item retrieval embeddings.
    pub embeddings: EmbeddingSet,
    /// User query embeddings, keyed by user id.
    pub queries: EmbeddingSet,
    pub scorer: SyntheticScorer,
    user_index: HashMap<String, usize>,
}

impl SyntheticWorld {
    pub fn user_position(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    /// Synthetic reranker score for a (user, item) pair.
    pub fn score(&self, user_id: &str, item_id: &str) -> Result<f64> {
        let u = self
            .user_position(user_id)
            .ok_or_else(|| Error::UnknownId(user_id.to_string()))?;
        let i = self
            .catalog
            .position(item_id)
            .ok_or_else(|| Error::UnknownId(item_id.to_string()))?;
        Ok(self.scorer.score(u, i))
    }

    pub fn relevance(&self, user_id: &str, item_id: &str) -> Result<f64> {
        let u = self
            .user_position(user_id)
            .ok_or_else(|| Error::UnknownId(user_id.to_string()))?;
        let i = self
            .catalog
            .position(item_id)
            .ok_or_else(|| Error::UnknownId(item_id.to_string()))?;
        Ok(self.scorer.relevance(u, i))
    }
}

const GENRES: [&str; 18] = [
    "Action", "Adventure", "Animation", "Children", "Comedy", "Crime", "Documentary", "Drama",
    "Fantasy", "FilmNoir", "Horror", "Musical", "Mystery", "Romance", "SciFi", "Thriller", "War",
    "Western",
];

const TITLE_WORDS: [&str; 40] = [
    "Silent", "River", "Night", "Last", "Summer", "Iron", "Garden", "Shadow", "City", "Broken",
    "Star", "Winter", "Red", "Long", "Road", "Glass", "House", "Lost", "Empire", "Secret",
    "Ocean", "Fire", "Golden", "Hour", "Wild", "Heart", "Stone", "Dark", "Blue", "Paper", "Moon",
    "Storm", "Hidden", "Valley", "Echo", "Crimson", "Tide", "Northern", "Light", "Machine",
];

const TAG_WORDS: [&str; 48] = [
    "atmospheric", "twist", "classic", "funny", "dark", "visually", "stunning", "quirky", "slow",
    "violent", "romantic", "thoughtful", "cult", "satire", "dystopia", "space", "heist",
    "revenge", "family", "friendship", "music", "surreal", "nostalgic", "gritty", "witty",
    "epic", "noir", "suspense", "courtroom", "zombies", "robots", "magic", "history", "biography",
    "sports", "road", "trip", "coming", "of", "age", "war", "western", "crime", "mystery",
    "animation", "documentary", "soundtrack", "ensemble",
];

fn id_width(n: usize) -> usize {
    n.max(1).to_string().len()
}

fn unit_gaussian(rng: &mut WorldRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Random `rows × cols` matrix with orthonormal columns (Gram-Schmidt).
fn orthonormal_columns(rng: &mut WorldRng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn embed(basis: &[Vec<f64>], latent: &[f64], noise: &[f64], alignment: f64) -> Vec<f64> {
    let dim = noise.len();
    let mut out = vec![0.0; dim];
    for (col, &z) in basis.iter().zip(latent) {
        out.iter_mut().zip(col).for_each(|(o, c)| *o += z * c);
    }
    out.iter_mut()
        .zip(noise)
        .for_each(|(o, n)| *o = alignment * *o + (1.0 - alignment) * n);
    out
}

/// Popularity count per popularity rank from `draws` inverse-CDF Zipf samples.
fn zipf_rank_counts(rng: &mut WorldRng, n: usize, exponent: f64, draws: usize) -> Vec<u64> {
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for r in 1..=n {
        acc += (r as f64).powf(-exponent);
        cdf.push(acc);
    }
    let mut counts = vec![0u64; n];
    for _ in 0..draws {
        let u = rng.random::<f64>() * acc;
        let rank = cdf.partition_point(|&c| c < u).min(n - 1);
        counts[rank] += 1;
    }
    counts
}

/// Indices of the largest coordinates, largest first.
fn top_dims(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn generate_world(spec: &WorldSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let n = spec.catalog_size;
    let m = spec.user_count;
    let ld = spec.latent_dim;
    let mut rng = rng_from_seed(spec.seed);

    let item_latent: Vec<Vec<f64>> = (0..n).map(|_| unit_gaussian(&mut rng, ld)).collect();

    let total_draws = n * spec.mean_popularity;
    let rank_counts = zipf_rank_counts(&mut rng, n, spec.zipf_exponent, total_draws);
    let mut rank_of: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        rank_of.swap(i, j);
    }
    let counts: Vec<u64> = (0..n).map(|i| rank_counts[rank_of[i]]).collect();
    let log_total = (total_draws as f64).ln_1p();
    let pop_score: Vec<f64> = counts.iter().map(|&c| (c as f64).ln_1p() / log_total).collect();

    let user_latent: Vec<Vec<f64>> = (0..m).map(|_| unit_gaussian(&mut rng, ld)).collect();

    let basis = orthonormal_columns(&mut rng, spec.embed_dim, ld);
    let item_ids: Vec<String> = (0..n).map(|i| format!("i{:0w$}", i, w = id_width(n))).collect();
    let user_ids: Vec<String> = (0..m).map(|u| format!("u{:0w$}", u, w = id_width(m))).collect();
    let mut embeddings = EmbeddingSet::new(spec.embed_dim);
    for (id, latent) in item_ids.iter().zip(&item_latent) {
        let noise = unit_gaussian(&mut rng, spec.embed_dim);
        embeddings.push(id.clone(), &embed(&basis, latent, &noise, spec.alignment))?;
    }
    let mut queries = EmbeddingSet::new(spec.embed_dim);
    for (id, latent) in user_ids.iter().zip(&user_latent) {
        let noise = unit_gaussian(&mut rng, spec.embed_dim);
        queries.push(id.clone(), &embed(&basis, latent, &noise, spec.alignment))?;
    }

    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let words = rng.random_range(1..=3);
        let title = (0..words)
            .map(|_| TITLE_WORDS[rng.random_range(0..TITLE_WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ");
        let year = rng.random_range(1950..2020);
        let n_genres = rng.random_range(1..=3);
        let mut genres: Vec<String> = Vec::new();
        for d in top_dims(&item_latent[i], n_genres) {
            let g = GENRES[d % GENRES.len()].to_string();
            if !genres.contains(&g) {
                genres.push(g);
            }
        }
        let n_tags = rng.random_range(0..=16usize);
        let mut tags: Vec<(String, u64)> = Vec::new();
        while tags.len() < n_tags {
            let t = TAG_WORDS[rng.random_range(0..TAG_WORDS.len())];
            if tags.iter().all(|(x, _)| x != t) {
                tags.push((t.to_string(), rng.random_range(1..=40)));
            }
        }
        items.push(Item::new(item_ids[i].clone(), title, Some(year), genres, tags, counts[i]));
    }
    let catalog = Catalog::from_items(items)?;

    let item_bias: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let token_counts: Vec<f64> = catalog
        .items()
        .iter()
        .map(|it| build_item_profile(it, DEFAULT_MAX_TAGS).split_whitespace().count() as f64)
        .collect();
    let mean_tokens = token_counts.iter().sum::<f64>() / n as f64;
    let length_score: Vec<f64> = token_counts.iter().map(|t| t / mean_tokens).collect();
    let noise_seed = derive_seed(spec.seed, &[SCORER_STREAM]);

    let scorer = SyntheticScorer {
        latent_dim: ld,
        item_latent: item_latent.concat(),
        user_latent: user_latent.concat(),
        pop_score,
        item_bias,
        length_score,
        mix: spec.gt_popularity_mix,
        signal: spec.scorer_signal,
        bias_weight: spec.scorer_item_bias,
        length_weight: spec.scorer_length_bias,
        noise_seed,
    };

    let gt_seed = derive_seed(spec.seed, &[GT_STREAM]);
    let gt_sets: Vec<BTreeSet<String>> = (0..m)
        .into_par_iter()
        .map(|u| {
            let mut keyed: Vec<(usize, f64)> = (0..n)
                .map(|i| {
                    let rel = scorer.relevance(u, i);
                    let key = if spec.gt_temperature > 0.0 {
                        let bits = splitmix64(derive_seed(gt_seed, &[u as u64, i as u64]));
                        rel / spec.gt_temperature - (-unit_open(bits).ln()).ln()
                    } else {
                        rel
                    };
                    (i, key)
                })
                .collect();
            crate::retrieval::top_k_in_place(&mut keyed, spec.gt_per_user, |a, b| {
                crate::retrieval::rank_order(a.1, &item_ids[a.0], b.1, &item_ids[b.0])
            });
            keyed.into_iter().map(|(i, _)| item_ids[i].clone()).collect()
        })
        .collect();

    let users: Vec<UserRecord> = (0..m)
        .map(|u| {
            let liked: Vec<&str> = top_dims(&user_latent[u], 2)
                .into_iter()
                .map(|d| GENRES[d % GENRES.len()])
                .collect();
            UserRecord {
                id: user_ids[u].clone(),
                profile_text: format!("likes {}", liked.join(" ")),
                gt_items: gt_sets[u].clone(),
            }
        })
        .collect();
    let user_index = user_ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();

    Ok(SyntheticWorld {
        spec: spec.clone(),
        catalog,
        users,
        embeddings,
        queries,
        scorer,
        user_index,
    })
}

/// File names written by [`export_world`].
pub mod files {
    pub const SPEC: &str = "world.conf";
    pub const CATALOG: &str = "catalog.csv";
    pub const USERS: &str = "users.jsonl";
    pub const EMBEDDINGS: &str = "embeddings.txt";
    pub const QUERIES: &str = "queries.txt";
    pub const SCORES: &str = "scores.jsonl";
}

/// Writes the world in the interchange formats. The score file covers each
/// user's top `export_pool_size` items by exact cosine retrieval.
pub fn export_world(world: &SyntheticWorld, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec_path = dir.join(files::SPEC);
    std::fs::write(&spec_path, world.spec.to_config()).map_err(|e| Error::io(&spec_path, e))?;
    save_catalog(&world.catalog, &dir.join(files::CATALOG), CatalogFormat::Csv)?;
    save_users(&world.users, &dir.join(files::USERS))?;
    save_embeddings(&world.embeddings, &dir.join(files::EMBEDDINGS))?;
    save_embeddings(&world.queries, &dir.join(files::QUERIES))?;
    world_score_table(world, world.spec.export_pool_size)?.save(&dir.join(files::SCORES))
}

/// Synthetic scores for every user's exact-cosine pool of depth `pool_size`.
pub fn world_score_table(world: &SyntheticWorld, pool_size: usize) -> Result<ScoreTable> {
    let k = pool_size.min(world.catalog.len());
    let rows: Vec<Vec<(String, f64)>> = world
        .users
        .par_iter()
        .enumerate()
        .map(|(u, user)| {
            let q = world.queries.get(&user.id).expect("query per user");
            let pool = flat_search(q, &world.embeddings, k)?;
            pool.item_ids()
                .map(|id| {
                    let i = world.catalog.position(id).expect("pool item in catalog");
                    Ok((id.to_string(), world.scorer.score(u, i)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut table = ScoreTable::new();
    for (user, row) in world.users.iter().zip(rows) {
        for (item, s) in row {
            table.insert(&user.id, &item, s)?;
        }
    }
    Ok(table)
}
