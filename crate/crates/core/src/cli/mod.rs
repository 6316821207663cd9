//! Command-line pipeline orchestration: one subcommand per stage, a JSON
//! config with per-stage sections, and content-hash caching so reruns with
//! unchanged inputs are no-ops.

mod config;
mod manifest;
mod stages;

pub use config::{
    AlignmentSection, BenchmarkSection, ClientMode, ClientsConfig, DataConfig, DataSource,
    EncoderSection, EvalSection, PipelineConfig, PromptFormat, SummarizerConfig,
};
pub use manifest::{config_hash, hash_inputs, Manifest, StageEntry};
pub use stages::{split_counts, Pipeline};

use clap::{Parser, Subcommand};

use crate::error::Result;

#[derive(Parser, Debug)]
#[command(
    name = "latte",
    about = "Client embeddings from event sequences: summary prompts, text-embedding alignment, evaluation",
    version
)]
pub struct Cli {
    /// Pipeline config JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,

    /// Overrides the global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides the artifact directory.
    #[arg(long, global = true)]
    pub artifacts_dir: Option<std::path::PathBuf>,

    /// Forces offline mock clients regardless of config.
    #[arg(long, global = true)]
    pub mock: bool,

    /// Column-name overrides for CSV ingestion, e.g.
    /// `client_id=cid,timestamp=ts`.
    #[arg(long, global = true)]
    pub schema: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Materialize the dataset (synthetic or CSV ingest) and split holdout.
    Synth,
    /// Compute behavioral profiles and render prompts.
    Summarize,
    /// Generate behavioral descriptions (endpoint or mock).
    Generate,
    /// Embed descriptions with the frozen text encoder (endpoint or mock).
    EmbedText,
    /// Pretrain the sequence encoder on overlapping subsequences.
    Pretrain,
    /// Align sequence embeddings with text embeddings (one run per head).
    Align,
    /// Export embeddings for every variant.
    Export,
    /// Cross-validated downstream evaluation plus holdout score.
    Evaluate,
    /// Throughput benchmark per variant.
    Benchmark,
    /// Figure-of-merit CSV + SVG.
    Fom,
    /// All stages in order.
    Pipeline,
}

/// Builds the effective config from the file (or defaults) plus CLI flags.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let mut c = PipelineConfig::default();
            c.artifacts_dir = "artifacts".into();
            c
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.artifacts_dir {
        config.artifacts_dir = dir.clone();
    }
    if cli.mock {
        config.clients.mode = ClientMode::Mock;
    }
    if let Some(spec) = &cli.schema {
        config.data.schema.apply_overrides(spec)?;
    }
    Ok(config)
}

/// Runs one CLI invocation end to end. The binary maps the error to its exit
/// code (2 = missing upstream artifact, 3 = config error, 1 = anything else).
pub fn run(cli: &Cli) -> Result<()> {
    let config = effective_config(cli)?;
    let mut pipeline = Pipeline::open(config)?;
    match cli.command {
        Command::Synth => pipeline.cmd_synth(),
        Command::Summarize => pipeline.cmd_summarize(),
        Command::Generate => pipeline.cmd_generate(),
        Command::EmbedText => pipeline.cmd_embed_text(),
        Command::Pretrain => pipeline.cmd_pretrain(),
        Command::Align => pipeline.cmd_align(),
        Command::Export => pipeline.cmd_export(),
        Command::Evaluate => pipeline.cmd_evaluate(),
        Command::Benchmark => pipeline.cmd_benchmark(),
        Command::Fom => pipeline.cmd_fom(),
        Command::Pipeline => pipeline.run_all(),
    }
}
