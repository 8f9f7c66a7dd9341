use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "rerank-diag", version, about = "Diagnostics for retrieve-then-rerank cold-start recommenders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a catalog and user file and write normalized copies.
    Ingest(IngestArgs),
    /// Generate a synthetic world and export it in the interchange formats.
    Synth(SynthArgs),
    /// Write exact-cosine candidate pools (pools.jsonl) for score export.
    Index(IndexArgs),
    /// Run every configured pipeline for every seed.
    Run(RunArgs),
    /// Rerun the reranking pipelines at several pool sizes.
    Ablate(RunArgs),
    /// Paired tests, coverage regression and score diagnostics over a run.
    Analyze(AnalyzeArgs),
    /// Emit tables and plot data for a finished run.
    Report(ReportArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Key-value config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output (or run) directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Input files.
#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<PathBuf>,
    /// Item embeddings (`dim=<d>` header, then `id<TAB>values`).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// User query embeddings in the same format.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Reranker scores (JSONL of user_id, item_id, score).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// World spec file; regenerates the synthetic world in memory.
    #[arg(long)]
    pub world: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    #[arg(long = "n-users")]
    pub n_users: Option<usize>,
    #[arg(long, num_args = 1..)]
    pub seeds: Option<Vec<u64>>,
    #[arg(long = "pool-sizes", num_args = 1..)]
    pub pool_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Override one world parameter, e.g. `--set alignment=0.2`.
    #[arg(long, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Bootstrap resamples for the confidence intervals (default 10000).
    #[arg(long)]
    pub resamples: Option<usize>,
    /// Seed of the bootstrap generator (default 42).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
}
