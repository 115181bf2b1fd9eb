//! Command-line driver: corpus statistics, training runs, sweeps over
//! configuration variants, translation and evaluation reports.

mod commands;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqforge::decode::Strategy;

pub use commands::{evaluate, stats, sweep, train, translate};
pub use manifest::ExperimentManifest;

/// File names inside a training output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.sqfg";
pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "seqforge", version, about = "Recurrent encoder-decoder translation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sentence-length statistics of a tab-separated corpus.
    Stats(StatsArgs),
    /// Train a model, resuming from a checkpoint in the output directory.
    Train(TrainArgs),
    /// Train every variant of a manifest and write a comparison table.
    Sweep(SweepArgs),
    /// Translate a file, one sentence per line.
    Translate(TranslateArgs),
    /// Score a checkpoint on a test corpus.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Histogram bin width in tokens.
    #[arg(long, default_value_t = 5)]
    pub bucket_width: usize,
    /// Write the histogram CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` lines; unset keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Validation corpus. Without it the corpus is split 80/10/10.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed (default 42).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed batch order and single-threaded evaluation.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the manifest's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyName {
    Greedy,
    Beam,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long, value_enum, default_value_t = StrategyName::Greedy)]
    pub strategy: StrategyName,
    #[arg(long, default_value_t = 5)]
    pub beam_width: usize,
    /// Length-normalization exponent for beam search.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Decode on a single thread.
    #[arg(long)]
    pub strict: bool,
}

impl DecodeArgs {
    pub fn strategy(&self) -> Strategy {
        match self.strategy {
            StrategyName::Greedy => Strategy::Greedy,
            StrategyName::Beam => Strategy::Beam {
                width: self.beam_width,
                alpha: self.alpha,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Write one attention CSV per sentence into this directory.
    #[arg(long)]
    pub alignments: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Tab-separated test pairs.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Bins of the sentence-BLEU histogram.
    #[arg(long, default_value_t = 10)]
    pub buckets: usize,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Stats(a) => stats::run(&a),
        Command::Train(a) => train::run(&a).map(|_| ()),
        Command::Sweep(a) => sweep::run(&a),
        Command::Translate(a) => translate::run(&a),
        Command::Evaluate(a) => evaluate::run(&a).map(|_| ()),
    }
}
