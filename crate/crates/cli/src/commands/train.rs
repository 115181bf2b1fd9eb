use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use seqforge::text::ParallelCorpus;
use seqforge::train::{TrainingConfig, TrainingState};

use super::write;
use crate::{TrainArgs, CHECKPOINT_FILE, CONFIG_FILE, HISTORY_FILE};

/// Everything one training run needs, independent of where it was asked for.
#[derive(Debug, Clone)]
pub struct TrainJob {
    pub config: TrainingConfig,
    pub corpus: PathBuf,
    pub valid: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<TrainingConfig> {
    match path {
        Some(p) => TrainingConfig::load(p).with_context(|| format!("config {}", p.display())),
        None => Ok(TrainingConfig::default()),
    }
}

pub fn run(args: &TrainArgs) -> anyhow::Result<TrainingState> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.strict |= args.strict;
    run_job(&TrainJob {
        config,
        corpus: args.corpus.clone(),
        valid: args.valid.clone(),
        out: args.out.clone(),
    })
}

/// Trains into `job.out`. An existing checkpoint there is resumed if it was
/// written with the same configuration (apart from the epoch count).
pub fn run_job(job: &TrainJob) -> anyhow::Result<TrainingState> {
    job.config.validate()?;
    let corpus = ParallelCorpus::load(&job.corpus)?;
    let (train, valid) = match &job.valid {
        Some(v) => (corpus, ParallelCorpus::load(v)?),
        None => {
            let split = corpus.split(job.config.seed, job.config.test_size)?;
            std::fs::create_dir_all(&job.out).with_context(|| format!("creating {}", job.out.display()))?;
            write(&job.out.join("train.tsv"), &split.train.to_tsv())?;
            write(&job.out.join("valid.tsv"), &split.valid.to_tsv())?;
            write(&job.out.join("test.tsv"), &split.test.to_tsv())?;
            (split.train, split.valid)
        }
    };
    if train.is_empty() {
        bail!("no training pairs in {}", job.corpus.display());
    }
    std::fs::create_dir_all(&job.out).with_context(|| format!("creating {}", job.out.display()))?;

    let checkpoint = job.out.join(CHECKPOINT_FILE);
    let mut state = if checkpoint.exists() {
        let mut state = TrainingState::load(&checkpoint)?;
        let mut saved = state.config.clone();
        saved.epochs = job.config.epochs;
        if saved != job.config {
            bail!(
                "{} was written with a different configuration; use a fresh output directory",
                checkpoint.display()
            );
        }
        log::info!("resuming from {} after epoch {}", checkpoint.display(), state.epochs_done());
        state.config.epochs = job.config.epochs;
        state
    } else {
        TrainingState::new(&train, job.config.clone())?
    };
    write(&job.out.join(CONFIG_FILE), &state.config.to_text())?;

    let history = job.out.join(HISTORY_FILE);
    let valid = (!valid.is_empty()).then_some(&valid);
    state.train(&train, valid, |s| {
        s.save(&checkpoint)?;
        std::fs::write(&history, s.history.to_csv()).map_err(|e| seqforge::Error::Io {
            path: history.clone(),
            source: e,
        })
    })?;
    write(&history, &state.history.to_csv())?;
    println!(
        "trained {} epoch(s); final loss {}; checkpoint {}",
        state.epochs_done(),
        state.history.last_loss().map_or("n/a".into(), |l| format!("{l:.4}")),
        checkpoint.display()
    );
    Ok(state)
}
