use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctxppi::commands::{self, Command};
use ctxppi::config::RunConfig;
use ctxppi::exit_code;

#[derive(Parser)]
#[command(
    name = "ctxppi",
    version,
    about = "Contextual protein-interaction embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Build the knowledge graph from PPI, DEG, ligand-receptor and hierarchy tables.
    BuildGraph(Common),
    /// Generate a planted block-model benchmark.
    Synth(Common),
    /// Self-supervised link-prediction pretraining.
    Pretrain(Common),
    /// Train the risk-gene head on pretrained embeddings.
    Finetune(Common),
    /// Similarity maps and marker rankings.
    Analyze(Common),
    /// Compare against a random-walk baseline.
    Compare(Common),
    /// Summarize stage outputs as markdown.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (1 for fully deterministic runs).
    #[arg(long)]
    threads: Option<usize>,
    /// Any other config key as `--key value`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY VALUE"
    )]
    overrides: Vec<String>,
}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &common.config {
        config.apply_file(path)?;
    }
    config.apply_args(&common.overrides)?;
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    if let Some(t) = common.threads {
        config.threads = t;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (command, common) = match &cli.command {
        Sub::BuildGraph(c) => (Command::BuildGraph, c),
        Sub::Synth(c) => (Command::Synth, c),
        Sub::Pretrain(c) => (Command::Pretrain, c),
        Sub::Finetune(c) => (Command::Finetune, c),
        Sub::Analyze(c) => (Command::Analyze, c),
        Sub::Compare(c) => (Command::Compare, c),
        Sub::Report(c) => (Command::Report, c),
    };
    let config = resolve(common)?;
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()?;
    }
    commands::run(command, &config)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
