use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;

/// Corpus curation toolkit: cleaning, deduplication, quality annotation,
/// classifier training and evaluation.
#[derive(Debug, Parser)]
#[command(name = "webcurate", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Global {
    /// Seed for every randomized step (hashing, shuffles, splits).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 means one per CPU. Never changes results.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and normalize raw JSONL inputs into an id-sorted corpus.
    Ingest(commands::IngestArgs),
    /// Apply safety, cleaning and heuristic filters (and optionally a basic quality model).
    Filter(commands::FilterArgs),
    /// Remove near-duplicate documents with MinHash LSH.
    Dedup(commands::DedupArgs),
    /// Score documents 0-5 with an annotation endpoint (resumable).
    Annotate(commands::AnnotateArgs),
    /// Join documents with annotations and split them into train and test sets.
    Split(commands::SplitArgs),
    /// Report agreement between two annotation sets.
    Agreement(commands::AgreementArgs),
    /// Train the regression-head quality classifier over a learning-rate grid.
    TrainClassifier(commands::TrainArgs),
    /// Score documents with a trained classifier.
    Score(commands::ScoreArgs),
    /// Compare classifiers on a labeled test set.
    Evaluate(commands::EvaluateArgs),
    /// Run the full pipeline from a config file.
    Run(commands::RunArgs),
}

/// Exit status for runtime failures; clap uses 2 for usage errors.
const RUNTIME_FAILURE: u8 = 1;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e
                .chain()
                .find_map(|c| c.downcast_ref::<webcurate::Error>())
                .map_or("runtime", |w| w.code());
            eprintln!("error[{category}]: {e:#}");
            ExitCode::from(RUNTIME_FAILURE)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    let g = &cli.global;
    match cli.command {
        Command::Ingest(a) => commands::ingest(a, g),
        Command::Filter(a) => commands::filter(a, g),
        Command::Dedup(a) => commands::dedup(a, g),
        Command::Annotate(a) => commands::annotate(a, g),
        Command::Split(a) => commands::split(a, g),
        Command::Agreement(a) => commands::agreement(a),
        Command::TrainClassifier(a) => commands::train(a, g),
        Command::Score(a) => commands::score(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Run(a) => commands::run(a, g),
    }
}

/// A finite, strictly positive number such as `3e-4`.
fn parse_positive(s: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v > 0.0)
        .ok_or_else(|| format!("{s:?} is not a positive number"))
}

fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        bail!("{} does not exist or is not a file", p.display());
    }
    Ok(())
}

fn default_beside(p: &Path, suffix: &str) -> PathBuf {
    let stem = p.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    let stem = stem.strip_suffix(".jsonl").unwrap_or(&stem);
    p.with_file_name(format!("{stem}{suffix}"))
}
