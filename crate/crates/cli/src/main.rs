//! `rerank-diag`: command-line front end.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 I/O error.

mod args;
mod settings;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use rerank_diag::catalog::{load_catalog, load_users, save_catalog, save_users, validate_users, CatalogFormat};
use rerank_diag::harness::{
    aggregate_runs, analyze_data, analyze_runs, load_analysis, load_meta, read_ablation_csv,
    run_ablation, run_experiment, write_data_analysis, ABLATION_CSV, STAT_TESTS,
};
use rerank_diag::report::{self, TableFormat};
use rerank_diag::retrieval::{flat_search, load_embeddings};
use rerank_diag::stats::DEFAULT_BOOTSTRAP_RESAMPLES;
use rerank_diag::synthgen::{export_world, generate_world};
use rerank_diag::{Error, Result};

use args::{Cli, Command};
use settings::Settings;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn init_workers(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidParameter("--workers must be at least 1".into()));
        }
        // A second initialization only happens in-process (tests); keep the first.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(&a),
        Command::Synth(a) => synth(&a),
        Command::Index(a) => {
            let s = Settings::resolve(&a.common, &a.data, Some(&a.run))?;
            init_workers(s.workers)?;
            index(&s)
        }
        Command::Run(a) => {
            let s = Settings::resolve(&a.common, &a.data, Some(&a.run))?;
            init_workers(s.workers)?;
            let data = s.load_data()?;
            let spec = s.run_spec(&data)?;
            let agg = run_experiment(&spec, &data)?;
            print!("{}", report::emit_main_table(&agg, TableFormat::Text));
            println!("logs: {}", spec.output_dir.display());
            Ok(())
        }
        Command::Ablate(a) => {
            let s = Settings::resolve(&a.common, &a.data, Some(&a.run))?;
            init_workers(s.workers)?;
            let data = s.load_data()?;
            let mut spec = s.run_spec(&data)?;
            spec.pool_sizes_ablation = Some(s.pool_sizes.clone().unwrap_or_else(|| vec![200, 500, 1000]));
            let table = run_ablation(&spec, &data)?;
            for (name, rows) in &table {
                println!("{name}");
                let k = spec.pipelines.iter().find(|p| &p.name == name).map_or(10, |p| p.k);
                print!("{}", report::emit_ablation_table(rows, k, TableFormat::Text));
            }
            println!("table: {}", spec.output_dir.join(ABLATION_CSV).display());
            Ok(())
        }
        Command::Analyze(a) => {
            let s = Settings::resolve(&a.common, &a.data, None)?;
            init_workers(s.workers)?;
            let resamples = a.resamples.or(s.resamples).unwrap_or(DEFAULT_BOOTSTRAP_RESAMPLES);
            let seed = a.seed.or(s.bootstrap_seed).unwrap_or(42);
            analyze(&s, resamples, seed)
        }
        Command::Report(a) => {
            let s = Settings::resolve(&a.common, &a.data, None)?;
            write_report(&s.out_dir()?)
        }
    }
}

fn ingest(a: &args::IngestArgs) -> Result<()> {
    let s = Settings::resolve(&a.common, &a.data, None)?;
    let catalog_path = s.require_path(&s.catalog, "--catalog")?;
    let users_path = s.require_path(&s.users, "--users")?;
    let out = s.out_dir()?;
    let catalog = load_catalog(catalog_path, CatalogFormat::from_path(catalog_path))?;
    let mut users = load_users(users_path)?;
    let missing = validate_users(&mut users, &catalog);
    if let Some(path) = &s.embeddings {
        let emb = load_embeddings(path)?;
        if let Some(item) = catalog.items().iter().find(|i| emb.get(&i.id).is_none()) {
            return Err(Error::Inconsistent(format!("no embedding for catalog item `{}`", item.id)));
        }
    }
    save_catalog(&catalog, &out.join("catalog.csv"), CatalogFormat::Csv)?;
    save_users(&users, &out.join("users.jsonl"))?;
    let report_path = out.join("missing_gt.json");
    let text = serde_json::to_string_pretty(&missing).expect("plain data") + "\n";
    std::fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
    println!(
        "{} items, {} users; {} missing ground-truth ids across {} users ({} left empty)",
        catalog.len(),
        users.len(),
        missing.missing.len(),
        missing.users_affected,
        missing.users_emptied.len()
    );
    Ok(())
}

fn synth(a: &args::SynthArgs) -> Result<()> {
    let spec = settings::world_spec(a.common.config.as_deref(), &a.set)?;
    let out = a
        .common
        .out
        .clone()
        .ok_or_else(|| Error::InvalidParameter("--out is required".into()))?;
    init_workers(a.common.workers)?;
    let world = generate_world(&spec)?;
    export_world(&world, &out)?;
    println!(
        "world: {} items, {} users, dim {} -> {}",
        world.catalog.len(),
        world.users.len(),
        world.embeddings.dim(),
        out.display()
    );
    Ok(())
}

/// Writes `pools.jsonl`: one candidate pool per user at the largest pool size.
fn index(s: &Settings) -> Result<()> {
    let data = s.load_data()?;
    let (Some(emb), Some(queries)) = (&data.embeddings, &data.queries) else {
        return Err(Error::InvalidParameter("index needs --embeddings and --queries (or --world)".into()));
    };
    let k = s
        .pool_sizes
        .as_ref()
        .and_then(|v| v.iter().copied().max())
        .unwrap_or(200)
        .min(data.catalog.len());
    let out = s.out_dir()?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join("pools.jsonl");
    let mut text = String::new();
    for user in &data.users {
        let q = queries
            .get(&user.id)
            .ok_or_else(|| Error::Inconsistent(format!("no query embedding for user `{}`", user.id)))?;
        let pool = flat_search(q, emb, k)?.for_user(user.id.clone());
        text.push_str(&serde_json::to_string(&pool).expect("plain data"));
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!("{} pools of {k} -> {}", data.users.len(), path.display());
    Ok(())
}

fn analyze(s: &Settings, resamples: usize, seed: u64) -> Result<()> {
    let dir = s.out_dir()?;
    let analysis = analyze_runs(&dir, resamples, seed)?;
    print!("{}", report::emit_stat_table(&analysis, TableFormat::Text));
    if let Some(fit) = &analysis.coverage_regression {
        println!(
            "recall@{} vs HR: slope {:.3}, intercept {:.3}, r {:.3}, R² {:.3}, p {:.3e}",
            analysis.coverage_cutoff, fit.slope, fit.intercept, fit.pearson_r, fit.r_squared, fit.p_value
        );
    }
    if s.has_data() {
        let meta = load_meta(&dir)?;
        let data = s.load_data()?;
        let extra = analyze_data(&meta, &data)?;
        write_data_analysis(&dir, &extra)?;
        if let Some(sep) = &extra.separation {
            println!(
                "score separation: mean diff {:.3}, d {:.3}, spearman {:.3}, overlap {:.3} ({} relevant, {} irrelevant)",
                sep.mean_diff, sep.cohens_d, sep.spearman_r, sep.overlap_fraction, sep.n_rel, sep.n_irr
            );
            for series in report::score_histograms(&extra.relevant_scores, &extra.irrelevant_scores, sep, 50) {
                report::write_plot(&dir, &series)?;
            }
        }
        if let Some(gt) = &extra.gt_positions {
            println!("GT positions: median {:.1}, quartiles {:.1} / {:.1}", gt.median, gt.q1, gt.q3);
            report::write_plot(&dir, &report::gt_position_histogram("gt_positions", gt))?;
        }
    }
    println!("written: {}", dir.join(STAT_TESTS).display());
    Ok(())
}

fn write_report(dir: &Path) -> Result<()> {
    let agg = aggregate_runs(dir)?;
    let analysis = if dir.join(STAT_TESTS).exists() {
        Some(load_analysis(dir)?)
    } else {
        None
    };
    let ablation_path: PathBuf = dir.join(ABLATION_CSV);
    let ablation: Option<BTreeMap<_, _>> = if ablation_path.exists() {
        Some(read_ablation_csv(&ablation_path)?)
    } else {
        None
    };
    let written = report::write_report(dir, &agg, analysis.as_ref(), ablation.as_ref())?;
    print!("{}", report::emit_main_table(&agg, TableFormat::Text));
    println!("{} files written under {}", written.len(), dir.display());
    Ok(())
}
