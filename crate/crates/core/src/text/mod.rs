//! Corpus ingestion, tokenization, vocabularies and length statistics.

mod corpus;
mod stats;
mod tokenize;
mod vocab;

pub use corpus::{CorpusSplit, ParallelCorpus, SentencePair, SkipReason, SkippedLine};
pub use stats::{corpus_stats, LengthBucket, LengthStats, LengthSummary, STATS_CSV_HEADER};
pub use tokenize::{is_punctuation, tokenize};
pub use vocab::{Side, Vocabulary, EOS, NUM_SPECIALS, PAD, SOS, SPECIAL_TOKENS, UNK};
