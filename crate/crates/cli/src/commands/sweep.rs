use std::fmt::Write as _;

use anyhow::Context;
use seqforge::train::{TrainingHistory, TrainingState};

use super::train::{run_job, TrainJob};
use super::write;
use crate::manifest::ExperimentManifest;
use crate::{SweepArgs, CHECKPOINT_FILE, HISTORY_FILE};

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const COMPARISON_HEADER: &str =
    "variant,cell_kind,attention_kind,recurrent_params,total_params,epochs,final_loss,final_bleu,median_seconds_per_epoch";

/// Trains each variant into its own directory, one after another, then
/// builds the comparison table from the files they left behind.
pub fn run(args: &SweepArgs) -> anyhow::Result<()> {
    let mut manifest = ExperimentManifest::load(&args.manifest)?;
    if let Some(out) = &args.out {
        manifest.out = out.clone();
    }
    for v in &mut manifest.variants {
        if let Some(seed) = args.seed {
            v.config.seed = seed;
        }
        v.config.strict |= args.strict;
    }
    for v in &manifest.variants {
        log::info!("variant {}", v.name);
        run_job(&TrainJob {
            config: v.config.clone(),
            corpus: manifest.corpus.clone(),
            valid: manifest.valid.clone(),
            out: manifest.out.join(&v.name),
        })
        .with_context(|| format!("variant `{}`", v.name))?;
    }
    let table = comparison(&manifest)?;
    let path = manifest.out.join(COMPARISON_FILE);
    write(&path, &table)?;
    print!("{table}");
    Ok(())
}

fn comparison(manifest: &ExperimentManifest) -> anyhow::Result<String> {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for v in &manifest.variants {
        let dir = manifest.out.join(&v.name);
        let history_path = dir.join(HISTORY_FILE);
        let text = std::fs::read_to_string(&history_path)
            .with_context(|| format!("reading {}", history_path.display()))?;
        let history = TrainingHistory::parse_csv(&text)?;
        let state = TrainingState::load(&dir.join(CHECKPOINT_FILE))?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            v.name,
            state.config.cell_kind,
            state.config.attention_kind.map_or("none".into(), |k| k.to_string()),
            state.model.recurrent_param_count(),
            state.model.total_param_count(),
            history.len(),
            opt(history.last_loss()),
            opt(history.last_bleu()),
            opt(history.median_seconds()),
        )
        .expect("writing to a String");
    }
    Ok(out)
}
