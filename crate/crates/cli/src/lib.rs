//! `mmrec` command-line driver.
//!
//! Every subcommand reads one JSON config, runs a single pipeline stage and
//! records a manifest under the output directory so later stages can check
//! that their inputs are current.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Ctx, EnrichFlags, TrainOverrides};
use crate::config::PipelineConfig;
use crate::error::{CliResult, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "mmrec", version, about = "Multimodal item enrichment and recommendation pipeline")]
pub struct Cli {
    /// Pipeline config file.
    #[arg(long, global = true, default_value = "mmrec.json")]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Training seed; overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run even when an upstream stage is stale or this stage is current.
    #[arg(long, global = true)]
    pub force: bool,
    /// Print the plan without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the dataset, filter to a k-core and write the splits.
    Ingest,
    /// Generate item responses with the chat backend.
    Enrich(EnrichArgs),
    /// Embed descriptions and responses.
    Embed,
    /// Build item representations for every combo.
    Repr,
    /// Train the two-tower model.
    Train(TrainArgs),
    /// Search learning rate and dropout on the first split.
    Grid,
    /// Evaluate trained models and baselines on the test splits.
    Eval(EvalArgs),
    /// Compare response embeddings with the description.
    Analyze(AnalyzeArgs),
    /// Summarise evaluation and analysis results.
    Report,
}

#[derive(Debug, Args)]
pub struct EnrichArgs {
    /// Enrich only this strategy (the stage manifest is not updated).
    #[arg(long)]
    pub strategy: Option<String>,
    /// HTTP backend config (JSON) replacing `chat_backend`.
    #[arg(long)]
    pub backend_config: Option<PathBuf>,
    /// Response cache file.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Directory for the per-strategy resume journals.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Maximum concurrent requests.
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Cut-off for the ranking metrics; overrides `eval.k`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Print the summary table as CSV.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Comma-separated strategy tags; overrides `analysis.strategies`.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<String>>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = PipelineConfig::load(&cli.config)?;
    let mut ctx = Ctx::new(cfg);
    if let Some(out) = cli.out {
        ctx.out = out;
    }
    ctx.force = cli.force;
    ctx.dry_run = cli.dry_run;
    ctx.seed = cli.seed;
    match cli.command {
        Command::Ingest => commands::cmd_ingest(&ctx),
        Command::Enrich(a) => commands::cmd_enrich(
            &ctx,
            &EnrichFlags {
                strategy: a.strategy,
                parallelism: a.parallelism,
                cache: a.cache,
                checkpoint: a.checkpoint,
                backend_config: a.backend_config,
            },
        ),
        Command::Embed => commands::cmd_embed(&ctx),
        Command::Repr => commands::cmd_repr(&ctx),
        Command::Train(a) => {
            ctx.train_overrides = TrainOverrides {
                learning_rate: a.lr,
                dropout: a.dropout,
                max_epochs: a.max_epochs,
            };
            commands::cmd_train(&ctx)
        }
        Command::Grid => commands::cmd_grid(&ctx),
        Command::Eval(a) => {
            ctx.eval_k = a.k;
            commands::cmd_eval(&ctx, a.table)
        }
        Command::Analyze(a) => {
            ctx.analysis_strategies = a.strategies;
            commands::cmd_analyze(&ctx)
        }
        Command::Report => commands::cmd_report(&ctx),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
