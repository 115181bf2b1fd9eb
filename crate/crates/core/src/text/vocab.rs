use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::corpus::ParallelCorpus;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];
pub const NUM_SPECIALS: usize = SPECIAL_TOKENS.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Dense bijection between tokens and ids; ids 0..4 are the specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// A vocabulary holding the specials followed by `tokens` in order.
    /// Duplicates and special spellings are ignored.
    pub fn from_tokens<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for s in SPECIAL_TOKENS {
            vocab.push(s);
        }
        for t in tokens {
            let t = t.as_ref();
            if !vocab.token_to_id.contains_key(t) {
                vocab.push(t);
            }
        }
        vocab
    }

    fn push(&mut self, token: &str) {
        self.token_to_id.insert(token.to_owned(), self.id_to_token.len());
        self.id_to_token.push(token.to_owned());
    }

    /// Collects every token seen at least `min_count` times on one side of
    /// the corpus, most frequent first; equal counts keep first-occurrence
    /// order.
    pub fn build(corpus: &ParallelCorpus, side: Side, min_count: usize) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if corpus.is_empty() {
            return Err(Error::Domain("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut next = 0;
        for pair in &corpus.pairs {
            let tokens = match side {
                Side::Source => &pair.source,
                Side::Target => &pair.target,
            };
            for t in tokens {
                let entry = counts.entry(t.as_str()).or_insert_with(|| {
                    next += 1;
                    (0, next)
                });
                entry.0 += 1;
            }
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts
            .into_iter()
            .filter(|(t, (c, _))| *c >= min_count && !SPECIAL_TOKENS.contains(t))
            .map(|(t, (c, first))| (t, c, first))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        Ok(Self::from_tokens(ranked.into_iter().map(|(t, _, _)| t)))
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Id of a corpus token; unknown tokens and special spellings map to
    /// `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        match self.token_to_id.get(token) {
            Some(&id) if id >= NUM_SPECIALS => id,
            _ => UNK,
        }
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// `<sos>` + ids + `<eos>`, right-padded with `<pad>` to `max_len`.
    /// Content beyond `max_len - 2` tokens is truncated.
    ///
    /// Panics if `max_len < 3`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> Vec<usize> {
        assert!(max_len >= 3, "max_len must leave room for <sos>, one token and <eos>");
        let mut ids = Vec::with_capacity(max_len);
        ids.push(SOS);
        ids.extend(tokens.iter().take(max_len - 2).map(|t| self.id(t.as_ref())));
        ids.push(EOS);
        ids.resize(max_len, PAD);
        ids
    }

    /// Maps ids back to tokens, dropping `<pad>`/`<sos>` and stopping at
    /// the first `<eos>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != SOS)
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK]).to_owned())
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for t in &self.id_to_token {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS || lines[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(Error::Integrity(
                "vocabulary dump must start with <pad>, <sos>, <eos>, <unk>".into(),
            ));
        }
        let vocab = Self::from_tokens(&lines[NUM_SPECIALS..]);
        if vocab.len() != lines.len() {
            return Err(Error::Integrity("vocabulary dump has duplicate tokens".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.dump()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse_dump(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
