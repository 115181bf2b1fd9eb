use anyhow::Context;
use seqforge::text::{corpus_stats, LengthSummary, ParallelCorpus, Side, Vocabulary, NUM_SPECIALS};

use super::write;
use crate::StatsArgs;

fn summary_line(name: &str, s: &LengthSummary) -> String {
    format!(
        "{name:<8} lengths: min {} / mean {:.2} / p50 {} / p90 {} / p95 {} / max {}",
        s.min, s.mean, s.p50, s.p90, s.p95, s.max
    )
}

pub fn run(args: &StatsArgs) -> anyhow::Result<()> {
    let corpus = ParallelCorpus::load(&args.corpus)?;
    let stats = corpus_stats(&corpus, args.bucket_width)
        .with_context(|| format!("statistics of {}", args.corpus.display()))?;
    // vocabulary sizes count word types only, not the special tokens
    let types = |side| Vocabulary::build(&corpus, side, 1).map(|v| v.len() - NUM_SPECIALS);

    println!("corpus   {}", args.corpus.display());
    println!("pairs    {} ({} line(s) skipped)", corpus.len(), corpus.skipped.len());
    println!(
        "source   {} words, {} types",
        corpus.source_word_count(),
        types(Side::Source)?
    );
    println!(
        "target   {} words, {} types",
        corpus.target_word_count(),
        types(Side::Target)?
    );
    println!("{}", summary_line("source", &stats.source));
    println!("{}", summary_line("target", &stats.target));

    let csv = stats.to_csv();
    match &args.out {
        Some(path) => write(path, &csv)?,
        None => print!("\n{csv}"),
    }
    Ok(())
}
