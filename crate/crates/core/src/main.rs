use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use capmatch::assign::MaskMode;
use capmatch::mcprop::FusionMode;
use capmatch::pipeline::{self, CandidateCount, ExperimentTable, PipelineConfig};

#[derive(Parser)]
#[command(name = "capmatch", version, about = "Match image URLs to reference captions")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (flat TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in corpus used when no config is given.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    mask_mode: Option<MaskMode>,
    #[arg(long, global = true)]
    fusion: Option<FusionMode>,
    /// Candidates per query: a count (`1000`) or a share of captions (`20%`).
    #[arg(long, global = true)]
    candidates: Option<CandidateCount>,
    /// Keep percent-escapes in URLs.
    #[arg(long, global = true)]
    no_percent_decode: bool,
    /// Run bijective assignment before evaluation.
    #[arg(long, global = true)]
    assign: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Clean query URLs into text.
    CleanUrls,
    /// Encode cleaned URLs and captions.
    Embed,
    /// Train the two-tower matcher.
    TrainMcprop,
    /// Retrieve top-k candidate captions per query.
    Propose,
    /// Train the pair scorer.
    TrainRerank,
    /// Rescore candidate lists.
    Rerank,
    /// One-to-one assignment over reranked scores.
    Assign,
    /// Write the submission and metrics.
    Evaluate,
    /// All stages in order.
    Pipeline,
    /// Side-by-side comparison: baselines, cascade or bijective.
    Experiment { table: String },
}

impl Command {
    fn stage(&self) -> Option<&'static str> {
        Some(match self {
            Self::CleanUrls => "clean-urls",
            Self::Embed => "embed",
            Self::TrainMcprop => "train-mcprop",
            Self::Propose => "propose",
            Self::TrainRerank => "train-rerank",
            Self::Rerank => "rerank",
            Self::Assign => "assign",
            Self::Evaluate => "evaluate",
            _ => return None,
        })
    }
}

fn build_config(c: &Common) -> anyhow::Result<PipelineConfig> {
    let mut config = match (&c.config, &c.preset) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(preset)) => PipelineConfig::preset(preset, "out")?,
        (None, None) => PipelineConfig::preset("synthetic-small", "out")?,
    };
    if let Some(out) = &c.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    if let Some(mask) = c.mask_mode {
        config.mask_mode = mask;
    }
    if let Some(fusion) = c.fusion {
        config.fusion = fusion;
    }
    if let Some(count) = c.candidates {
        config.set_candidates(count);
    }
    if c.no_percent_decode {
        config.percent_decode = false;
    }
    if c.assign {
        config.assign = true;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let config = build_config(&cli.common)?;
    match &cli.command {
        Command::Pipeline => {
            let (submission, metrics) = pipeline::run_pipeline(&config)?;
            eprintln!(
                "wrote {} submission rows to {}",
                submission.rows.len(),
                config.output_dir.join(pipeline::artifact::SUBMISSION).display()
            );
            print!("{}", metrics.to_key_values());
        }
        Command::Experiment { table } => {
            let table: ExperimentTable = table.parse()?;
            print!("{}", pipeline::run_experiment_table(&config, table)?.to_table());
        }
        Command::Evaluate => {
            let (_, metrics) = pipeline::stage_evaluate(&config)?;
            print!("{}", metrics.to_key_values());
        }
        Command::Rerank => {
            let stats = pipeline::stage_rerank(&config)?;
            eprintln!(
                "scored {} pairs ({} queries x {} candidates)",
                stats.scorer_calls, stats.queries, stats.candidates_per_query
            );
        }
        other => pipeline::run_stage(&config, other.stage().expect("stage command"))?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
