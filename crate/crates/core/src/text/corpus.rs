use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tokenize::tokenize;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

/// A line of the corpus file that could not be used.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedLine {
    /// 1-based line number in the input.
    pub line: usize,
    pub reason: SkipReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipReason {
    NoTab,
    EmptyAfterTokenizing,
}

/// Aligned source/target sentences in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub provenance: Option<PathBuf>,
    pub skipped: Vec<SkippedLine>,
}

impl ParallelCorpus {
    /// Reads a tab-separated corpus: one pair per line, source first, split
    /// on the first tab. Blank lines are ignored; malformed lines are
    /// recorded in [`ParallelCorpus::skipped`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut corpus = Self::parse(&text);
        corpus.provenance = Some(path.to_path_buf());
        if corpus.pairs.is_empty() {
            log::warn!("corpus {} contains no usable sentence pairs", path.display());
        }
        if !corpus.skipped.is_empty() {
            log::warn!(
                "corpus {}: skipped {} malformed line(s)",
                path.display(),
                corpus.skipped.len()
            );
        }
        Ok(corpus)
    }

    pub fn parse(text: &str) -> Self {
        let mut corpus = ParallelCorpus::default();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((src, tgt)) = line.split_once('\t') else {
                corpus.skipped.push(SkippedLine {
                    line: idx + 1,
                    reason: SkipReason::NoTab,
                });
                continue;
            };
            let (source, target) = (tokenize(src), tokenize(tgt));
            if source.is_empty() || target.is_empty() {
                corpus.skipped.push(SkippedLine {
                    line: idx + 1,
                    reason: SkipReason::EmptyAfterTokenizing,
                });
                continue;
            }
            corpus.pairs.push(SentencePair { source, target });
        }
        corpus
    }

    /// Builds a corpus from raw sentence strings, tokenizing both sides.
    pub fn from_raw<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let text: Vec<String> = pairs
            .into_iter()
            .map(|(s, t)| format!("{s}\t{t}"))
            .collect();
        Self::parse(&text.join("\n"))
    }

    pub fn from_pairs(pairs: Vec<SentencePair>) -> Self {
        ParallelCorpus {
            pairs,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_word_count(&self) -> usize {
        self.pairs.iter().map(|p| p.source.len()).sum()
    }

    pub fn target_word_count(&self) -> usize {
        self.pairs.iter().map(|p| p.target.len()).sum()
    }

    /// Serializes back to the tab-separated file format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&p.source.join(" "));
            out.push('\t');
            out.push_str(&p.target.join(" "));
            out.push('\n');
        }
        out
    }

    /// Seeded 80/10/10 split. `test_size` overrides the test share with an
    /// absolute pair count (the remainder splits 8:1 into train/validation).
    pub fn split(&self, seed: u64, test_size: Option<usize>) -> Result<CorpusSplit> {
        let n = self.pairs.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let n_test = match test_size {
            Some(t) if t >= n => {
                return Err(Error::Config(format!(
                    "test_size {t} leaves no training data in a corpus of {n} pairs"
                )))
            }
            Some(t) => t,
            None => n / 10,
        };
        let rest = n - n_test;
        let n_valid = if test_size.is_some() { rest / 9 } else { n / 10 };
        let pick = |range: std::ops::Range<usize>| ParallelCorpus {
            pairs: order[range].iter().map(|&i| self.pairs[i].clone()).collect(),
            provenance: self.provenance.clone(),
            skipped: Vec::new(),
        };
        Ok(CorpusSplit {
            test: pick(0..n_test),
            valid: pick(n_test..n_test + n_valid),
            train: pick(n_test + n_valid..n),
        })
    }
}

#[derive(Clone, Debug)]
pub struct CorpusSplit {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
}
