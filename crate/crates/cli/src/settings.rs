//! Flag and config-file resolution. Flags win over config values; relative
//! paths in a config file are taken relative to that file's directory.

use std::path::{Path, PathBuf};

use rerank_diag::catalog::{load_catalog, load_users, validate_users, CatalogFormat};
use rerank_diag::config::{Entry, KvConfig, Section};
use rerank_diag::harness::{default_pipelines, ExperimentData, PipelineConfig, RerankerKind, RetrieverKind, RunSpec};
use rerank_diag::retrieval::load_embeddings;
use rerank_diag::rng::DEFAULT_SEEDS;
use rerank_diag::synthgen::{generate_world, WorldSpec};
use rerank_diag::{Error, Result, ScoreTable};

use crate::args::{CommonArgs, DataArgs, RunFlags};

const ROOT_KEYS: [&str; 14] = [
    "catalog",
    "users",
    "embeddings",
    "queries",
    "scores",
    "world",
    "out",
    "workers",
    "n_users",
    "seeds",
    "pool_sizes",
    "k",
    "resamples",
    "bootstrap_seed",
];

const DEFAULT_N_USERS: usize = 500;
const DEFAULT_POOL_SIZE: usize = 200;

#[derive(Debug, Default)]
pub struct Settings {
    pub config: Option<KvConfig>,
    pub catalog: Option<PathBuf>,
    pub users: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub world: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub n_users: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub pool_sizes: Option<Vec<usize>>,
    pub k: Option<usize>,
    pub resamples: Option<usize>,
    pub bootstrap_seed: Option<u64>,
}

fn load_config(path: &Path) -> Result<KvConfig> {
    let cfg = KvConfig::load(path)?;
    cfg.root.check_keys(path, &ROOT_KEYS)?;
    if let Some(s) = cfg.sections.iter().find(|s| s.kind != "pipeline" && s.kind != "world") {
        return Err(Error::InvalidParameter(format!(
            "{}:{}: unknown section kind `{}` (expected `pipeline` or `world`)",
            path.display(),
            s.line,
            s.kind
        )));
    }
    Ok(cfg)
}

impl Settings {
    pub fn resolve(common: &CommonArgs, data: &DataArgs, run: Option<&RunFlags>) -> Result<Self> {
        let config = common.config.as_deref().map(load_config).transpose()?;
        let base = common
            .config
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let root = config.as_ref().map(|c| (&c.root, c.path.clone()));
        let path_of = |flag: &Option<PathBuf>, key: &str| -> Option<PathBuf> {
            flag.clone().or_else(|| {
                let (sec, _) = root.as_ref()?;
                sec.get(key).map(|e| base.join(&e.value))
            })
        };
        let parse_opt = |key: &str| -> Result<Option<usize>> {
            match &root {
                Some((sec, p)) => sec.parse_opt(p, key),
                None => Ok(None),
            }
        };
        let mut s = Settings {
            catalog: path_of(&data.catalog, "catalog"),
            users: path_of(&data.users, "users"),
            embeddings: path_of(&data.embeddings, "embeddings"),
            queries: path_of(&data.queries, "queries"),
            scores: path_of(&data.scores, "scores"),
            world: path_of(&data.world, "world"),
            out: path_of(&common.out, "out"),
            workers: common.workers.map_or_else(|| parse_opt("workers"), |w| Ok(Some(w)))?,
            ..Settings::default()
        };
        let empty = RunFlags::default();
        let run = run.unwrap_or(&empty);
        s.n_users = run.n_users.map_or_else(|| parse_opt("n_users"), |v| Ok(Some(v)))?;
        s.k = run.k.map_or_else(|| parse_opt("k"), |v| Ok(Some(v)))?;
        s.seeds = match &run.seeds {
            Some(v) => Some(v.clone()),
            None => match &root {
                Some((sec, p)) => sec.parse_list(p, "seeds")?,
                None => None,
            },
        };
        s.pool_sizes = match &run.pool_sizes {
            Some(v) => Some(v.clone()),
            None => match &root {
                Some((sec, p)) => sec.parse_list(p, "pool_sizes")?,
                None => None,
            },
        };
        if let Some((sec, p)) = &root {
            s.resamples = sec.parse_opt(p, "resamples")?;
            s.bootstrap_seed = sec.parse_opt(p, "bootstrap_seed")?;
        }
        s.config = config;
        Ok(s)
    }

    pub fn require_path<'a>(&self, p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::InvalidParameter(format!("{flag} is required")))
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| Error::InvalidParameter("--out is required".into()))
    }

    fn world_section(&self) -> Option<&Section> {
        self.config.as_ref()?.sections_of("world").next()
    }

    pub fn has_data(&self) -> bool {
        self.world.is_some() || self.world_section().is_some() || self.catalog.is_some()
    }

    pub fn load_data(&self) -> Result<ExperimentData> {
        let spec = match (&self.world, self.world_section()) {
            (Some(path), _) => Some(WorldSpec::load(path)?),
            (None, Some(section)) => {
                let path = &self.config.as_ref().expect("section came from config").path;
                Some(WorldSpec::from_section(section, path)?)
            }
            (None, None) => None,
        };
        if let Some(spec) = spec {
            if self.catalog.is_some() || self.users.is_some() || self.embeddings.is_some() || self.queries.is_some() {
                return Err(Error::InvalidParameter(
                    "a synthetic world replaces --catalog/--users/--embeddings/--queries; give one or the other".into(),
                ));
            }
            let mut data = ExperimentData::from_world(generate_world(&spec)?);
            if let Some(path) = &self.scores {
                data.scores = Some(ScoreTable::load(path)?);
            }
            return Ok(data);
        }
        let catalog_path = self.require_path(&self.catalog, "--catalog (or --world)")?;
        let users_path = self.require_path(&self.users, "--users")?;
        let catalog = load_catalog(catalog_path, CatalogFormat::from_path(catalog_path))?;
        let mut users = load_users(users_path)?;
        let missing = validate_users(&mut users, &catalog);
        if !missing.is_clean() {
            eprintln!(
                "warning: {} ground-truth ids are not in the catalog ({} users affected, {} left with no ground truth)",
                missing.missing.len(),
                missing.users_affected,
                missing.users_emptied.len()
            );
        }
        Ok(ExperimentData {
            catalog,
            users,
            embeddings: self.embeddings.as_deref().map(load_embeddings).transpose()?,
            queries: self.queries.as_deref().map(load_embeddings).transpose()?,
            scores: self.scores.as_deref().map(ScoreTable::load).transpose()?,
            world: None,
        })
    }

    /// Pipelines from `[pipeline]` sections, else the standard set restricted
    /// to what the inputs support.
    pub fn pipelines(&self, data: &ExperimentData) -> Result<Vec<PipelineConfig>> {
        let configured: Vec<PipelineConfig> = match &self.config {
            Some(cfg) => cfg
                .sections_of("pipeline")
                .map(|s| PipelineConfig::from_section(s, &cfg.path))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let mut pipelines = if configured.is_empty() {
            let pool = self.pool_sizes.as_ref().and_then(|v| v.first().copied()).unwrap_or(DEFAULT_POOL_SIZE);
            let k = self.k.unwrap_or(rerank_diag::harness::DEFAULT_K);
            let has_vectors = data.embeddings.is_some() && data.queries.is_some();
            let has_ce = data.world.is_some() || data.scores.is_some();
            default_pipelines(pool, k, data.world.is_some())
                .into_iter()
                .filter(|p| has_vectors || p.retriever != RetrieverKind::Vector)
                .filter(|p| has_ce || p.reranker == RerankerKind::None)
                .collect()
        } else {
            configured
        };
        if let Some(k) = self.k {
            for p in &mut pipelines {
                p.k = k;
            }
        }
        Ok(pipelines)
    }

    pub fn run_spec(&self, data: &ExperimentData) -> Result<RunSpec> {
        let n_users = self.n_users.unwrap_or(DEFAULT_N_USERS.min(data.users.len()));
        let mut spec = RunSpec::new(n_users, self.pipelines(data)?, self.out_dir()?);
        spec.seeds = self.seeds.clone().unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
        Ok(spec)
    }
}

/// World spec from the config's `[world]` section (or its root keys),
/// with `KEY=VALUE` overrides applied.
pub fn world_spec(config: Option<&Path>, overrides: &[String]) -> Result<WorldSpec> {
    let (mut section, path) = match config {
        Some(p) => {
            let cfg = KvConfig::load(p)?;
            let world = cfg.sections_of("world").next().cloned();
            let section = world.unwrap_or(cfg.root);
            (section, p.to_path_buf())
        }
        None => (Section::default(), PathBuf::from("<flags>")),
    };
    for (i, o) in overrides.iter().enumerate() {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("--set expects KEY=VALUE, got `{o}`")))?;
        let entry = Entry {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line: i + 1,
        };
        section.entries.retain(|e| e.key != entry.key);
        section.entries.push(entry);
    }
    WorldSpec::from_section(&section, &path)
}
