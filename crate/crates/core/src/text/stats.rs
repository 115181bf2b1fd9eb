use std::fmt::Write as _;

use super::corpus::ParallelCorpus;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LengthSummary {
    pub count: usize,
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub p50: usize,
    pub p90: usize,
    pub p95: usize,
}

impl LengthSummary {
    fn from_lengths(lengths: &[usize]) -> Self {
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        // nearest-rank percentile
        let pct = |p: f64| sorted[((p / 100.0 * n as f64).ceil() as usize).clamp(1, n) - 1];
        LengthSummary {
            count: n,
            min: sorted[0],
            max: sorted[n - 1],
            mean: sorted.iter().sum::<usize>() as f64 / n as f64,
            p50: pct(50.0),
            p90: pct(90.0),
            p95: pct(95.0),
        }
    }
}

/// One histogram bin covering lengths in `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LengthBucket {
    pub start: usize,
    pub end: usize,
    pub count_source: usize,
    pub count_target: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthStats {
    pub source_lengths: Vec<usize>,
    pub target_lengths: Vec<usize>,
    pub source: LengthSummary,
    pub target: LengthSummary,
    pub buckets: Vec<LengthBucket>,
}

pub const STATS_CSV_HEADER: &str = "bucket_start,bucket_end,count_source,count_target";

/// Per-side sentence-length distributions with a shared histogram of
/// `bucket_width`-token bins.
pub fn corpus_stats(corpus: &ParallelCorpus, bucket_width: usize) -> Result<LengthStats> {
    if corpus.is_empty() {
        return Err(Error::Domain("length statistics of an empty corpus".into()));
    }
    if bucket_width == 0 {
        return Err(Error::Config("bucket width must be positive".into()));
    }
    let source_lengths: Vec<usize> = corpus.pairs.iter().map(|p| p.source.len()).collect();
    let target_lengths: Vec<usize> = corpus.pairs.iter().map(|p| p.target.len()).collect();
    let longest = source_lengths
        .iter()
        .chain(&target_lengths)
        .copied()
        .max()
        .unwrap_or(0);
    let mut buckets: Vec<LengthBucket> = (0..=longest / bucket_width)
        .map(|k| LengthBucket {
            start: k * bucket_width,
            end: (k + 1) * bucket_width,
            count_source: 0,
            count_target: 0,
        })
        .collect();
    for &l in &source_lengths {
        buckets[l / bucket_width].count_source += 1;
    }
    for &l in &target_lengths {
        buckets[l / bucket_width].count_target += 1;
    }
    Ok(LengthStats {
        source: LengthSummary::from_lengths(&source_lengths),
        target: LengthSummary::from_lengths(&target_lengths),
        source_lengths,
        target_lengths,
        buckets,
    })
}

impl LengthStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(STATS_CSV_HEADER);
        out.push('\n');
        for b in &self.buckets {
            writeln!(out, "{},{},{},{}", b.start, b.end, b.count_source, b.count_target)
                .expect("writing to a String");
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Vec<LengthBucket>> {
        let mut lines = text.lines();
        if lines.next() != Some(STATS_CSV_HEADER) {
            return Err(Error::Integrity("stats CSV header mismatch".into()));
        }
        lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<usize> = l
                    .split(',')
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Integrity(format!("bad stats row `{l}`")))?;
                match f.as_slice() {
                    [start, end, s, t] => Ok(LengthBucket {
                        start: *start,
                        end: *end,
                        count_source: *s,
                        count_target: *t,
                    }),
                    _ => Err(Error::Integrity(format!("bad stats row `{l}`"))),
                }
            })
            .collect()
    }
}
