use seqforge::decode::worker_count;
use seqforge::metrics::EvaluationReport;
use seqforge::text::ParallelCorpus;
use seqforge::train::TrainingState;

use super::write;
use crate::EvaluateArgs;

pub const REPORT_FILE: &str = "report.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const TRANSLATIONS_FILE: &str = "translations.txt";

pub fn run(args: &EvaluateArgs) -> anyhow::Result<EvaluationReport> {
    let state = TrainingState::load(&args.checkpoint)?;
    let corpus = ParallelCorpus::load(&args.corpus)?;
    let sources: Vec<Vec<String>> = corpus.pairs.iter().map(|p| p.source.clone()).collect();
    let references: Vec<Vec<String>> = corpus.pairs.iter().map(|p| p.target.clone()).collect();
    let out = state
        .translator()
        .translate_all(&sources, args.decode.strategy(), worker_count(args.decode.strict))?;
    let candidates: Vec<Vec<String>> = out.into_iter().map(|t| t.tokens).collect();
    let report = EvaluationReport::compute(&candidates, &references)?;

    std::fs::create_dir_all(&args.out)?;
    write(&args.out.join(REPORT_FILE), &report.to_csv())?;
    write(&args.out.join(HISTOGRAM_FILE), &report.histogram_csv(args.buckets))?;
    let lines: String = candidates.iter().map(|c| c.join(" ") + "\n").collect();
    write(&args.out.join(TRANSLATIONS_FILE), &lines)?;

    let b = &report.bleu;
    println!("sentences {}", candidates.len());
    for (n, p) in b.precisions.iter().enumerate() {
        println!("p{}        {p:.4}", n + 1);
    }
    println!("bp        {:.4}", b.brevity_penalty);
    println!("bleu      {:.4}", b.score);
    println!("chrf      {:.4}", report.chrf);
    Ok(report)
}
