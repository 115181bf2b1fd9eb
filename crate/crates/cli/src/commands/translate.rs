use anyhow::Context;
use seqforge::decode::worker_count;
use seqforge::train::TrainingState;

use super::write;
use crate::TranslateArgs;

pub fn run(args: &TranslateArgs) -> anyhow::Result<()> {
    let state = TrainingState::load(&args.checkpoint)?;
    let translator = state.translator();
    let out = translator.translate_file(
        &args.input,
        &args.output,
        args.decode.strategy(),
        worker_count(args.decode.strict),
    )?;
    if let Some(dir) = &args.alignments {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, t) in out.iter().enumerate() {
            write(&dir.join(format!("alignment_{:05}.csv", i + 1)), &t.alignment.to_csv())?;
        }
    }
    log::info!("translated {} sentence(s) into {}", out.len(), args.output.display());
    Ok(())
}
