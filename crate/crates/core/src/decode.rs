//! Greedy and beam-search generation.
//!
//! Both searches run against [`StepModel`], which yields per-row
//! log-probabilities for a batch of prefixes. `<pad>` and `<sos>` are never
//! candidates; `<eos>` ends a hypothesis and is not part of its output.

use std::cmp::Ordering;
use std::path::Path;
use std::str::FromStr;

use crate::attention::AlignmentMap;
use crate::error::{Error, Result};
use crate::model::{DecoderState, EncodedSource, Seq2Seq};
use crate::tensor::log_softmax;
use crate::text::{tokenize, Vocabulary, EOS, PAD, SOS};

/// One batched step: log-probabilities `[batch][vocab]`, the advanced
/// state, and optional attention rows.
pub struct StepResult<S> {
    pub log_probs: Vec<Vec<f64>>,
    pub state: S,
    pub weights: Option<Vec<Vec<f64>>>,
}

pub trait StepModel {
    type State;

    fn vocab_size(&self) -> usize;

    /// Advances every row of `state` by feeding `prev[row]`.
    fn step(&self, prev: &[usize], state: &Self::State) -> Result<StepResult<Self::State>>;

    /// Keeps the given rows, in order; rows may repeat.
    fn select(&self, state: &Self::State, rows: &[usize]) -> Self::State;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Emitted tokens, without `<sos>`/`<eos>`.
    pub tokens: Vec<usize>,
    /// Sum of per-step log-probabilities, the `<eos>` step included.
    pub log_prob: f64,
    /// Whether generation ended with `<eos>` rather than hitting `max_len`.
    pub finished: bool,
    /// Attention weights per emitted token.
    pub weights: Vec<Vec<f64>>,
}

impl Decoded {
    /// Number of decode steps taken.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    /// `log_prob / steps^alpha`.
    pub fn normalized_score(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            self.log_prob
        } else {
            self.log_prob / (self.steps().max(1) as f64).powf(alpha)
        }
    }
}

fn emittable(id: usize) -> bool {
    id != PAD && id != SOS
}

/// Highest-scoring emittable id; the lowest id wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = None::<(usize, f64)>;
    for (i, &v) in row.iter().enumerate() {
        if !emittable(i) {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.expect("vocabulary has an emittable token").0
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len < 1 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    Ok(())
}

/// Greedy decoding of every row of `init` at once. Rows that emitted
/// `<eos>` are dropped from later steps.
pub fn greedy_decode<M: StepModel>(model: &M, init: M::State, batch: usize, max_len: usize) -> Result<Vec<Decoded>> {
    check_max_len(max_len)?;
    let mut out: Vec<Decoded> = (0..batch)
        .map(|_| Decoded {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
            weights: Vec::new(),
        })
        .collect();
    let mut active: Vec<usize> = (0..batch).collect();
    let mut prev = vec![SOS; batch];
    let mut state = init;
    for _ in 0..max_len {
        if active.is_empty() {
            break;
        }
        let step = model.step(&prev, &state)?;
        let mut keep = Vec::with_capacity(active.len());
        let mut next_prev = Vec::with_capacity(active.len());
        for (row, &sent) in active.iter().enumerate() {
            let lp = &step.log_probs[row];
            let tok = argmax(lp);
            let d = &mut out[sent];
            d.log_prob += lp[tok];
            if tok == EOS {
                d.finished = true;
                continue;
            }
            d.tokens.push(tok);
            if let Some(w) = &step.weights {
                d.weights.push(w[row].clone());
            }
            keep.push(row);
            next_prev.push(tok);
        }
        active = keep.iter().map(|&r| active[r]).collect();
        state = if keep.len() == step.log_probs.len() {
            step.state
        } else {
            model.select(&step.state, &keep)
        };
        prev = next_prev;
    }
    Ok(out)
}

struct Live {
    tokens: Vec<usize>,
    log_prob: f64,
    weights: Vec<Vec<f64>>,
}

/// Beam search over summed log-probabilities for one sentence (`init` has
/// a single row).
///
/// Each step ranks the `2 * width` best extensions of the live beam. An
/// `<eos>` extension (or any extension at `max_len`) ranked inside the top
/// `width` is retired to the finished pool; the best non-final extensions
/// refill the beam. With `alpha == 0` the search stops as soon as the best
/// finished score is at least the best live score, since scores can only
/// fall. The returned hypothesis maximizes `log_prob / steps^alpha`.
pub fn beam_decode<M: StepModel>(
    model: &M,
    init: M::State,
    width: usize,
    max_len: usize,
    alpha: f64,
) -> Result<Decoded> {
    if width < 1 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    check_max_len(max_len)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("length-normalization alpha must be >= 0, got {alpha}")));
    }
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        weights: Vec::new(),
    }];
    let mut state = init;
    let mut finished: Vec<Decoded> = Vec::new();
    for t in 1..=max_len {
        let prev: Vec<usize> = live.iter().map(|h| h.tokens.last().copied().unwrap_or(SOS)).collect();
        let step = model.step(&prev, &state)?;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (row, h) in live.iter().enumerate() {
            for (tok, &lp) in step.log_probs[row].iter().enumerate() {
                if emittable(tok) {
                    cands.push((h.log_prob + lp, row, tok));
                }
            }
        }
        // best first; ties by beam row then token id
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(2 * width);
        let mut next = Vec::with_capacity(width);
        let mut rows = Vec::with_capacity(width);
        for (rank, &(score, row, tok)) in cands.iter().enumerate() {
            let h = &live[row];
            let w = step.weights.as_ref().map(|w| w[row].clone());
            if tok == EOS || t == max_len {
                if rank < width {
                    let mut d = Decoded {
                        tokens: h.tokens.clone(),
                        log_prob: score,
                        finished: tok == EOS,
                        weights: h.weights.clone(),
                    };
                    if tok != EOS {
                        d.tokens.push(tok);
                        d.weights.extend(w);
                    }
                    finished.push(d);
                }
            } else if next.len() < width {
                let mut weights = h.weights.clone();
                weights.extend(w);
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                next.push(Live {
                    tokens,
                    log_prob: score,
                    weights,
                });
                rows.push(row);
            }
        }
        if next.is_empty() {
            break;
        }
        if alpha == 0.0 {
            let best_done = finished.iter().map(|d| d.log_prob).fold(f64::NEG_INFINITY, f64::max);
            let best_live = next.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_live {
                break;
            }
        }
        state = model.select(&step.state, &rows);
        live = next;
    }
    let mut best: Option<Decoded> = None;
    for d in finished {
        if best
            .as_ref()
            .is_none_or(|b| d.normalized_score(alpha) > b.normalized_score(alpha))
        {
            best = Some(d);
        }
    }
    best.ok_or_else(|| Error::Domain("beam search retired no hypothesis".into()))
}

/// Batched state of the neural model: decoder state plus the encoder
/// output each row attends over.
#[derive(Clone, Debug)]
pub struct NeuralState {
    pub decoder: DecoderState,
    pub encoded: EncodedSource,
}

impl StepModel for Seq2Seq {
    type State = NeuralState;

    fn vocab_size(&self) -> usize {
        self.arch.target_vocab
    }

    fn step(&self, prev: &[usize], state: &NeuralState) -> Result<StepResult<NeuralState>> {
        let out = self.decode_step(prev, &state.decoder, &state.encoded)?;
        let log_probs = (0..out.logits.rows()).map(|r| log_softmax(out.logits.row(r))).collect();
        // padding carries zero weight; drop it from the maps
        let weights = out.weights.map(|w| {
            let t = w.cols();
            (0..w.rows())
                .map(|r| {
                    let valid = &state.encoded.valid[r * t..(r + 1) * t];
                    w.row(r).iter().zip(valid).filter(|(_, ok)| **ok).map(|(x, _)| *x).collect()
                })
                .collect()
        });
        Ok(StepResult {
            log_probs,
            state: NeuralState {
                decoder: out.state,
                encoded: state.encoded.clone(),
            },
            weights,
        })
    }

    fn select(&self, state: &NeuralState, rows: &[usize]) -> NeuralState {
        NeuralState {
            decoder: state.decoder.select(rows),
            encoded: state.encoded.select(rows),
        }
    }
}

fn start(model: &Seq2Seq, sources: &[Vec<usize>]) -> Result<NeuralState> {
    let width = sources.iter().map(Vec::len).max().unwrap_or(0);
    let padded: Vec<Vec<usize>> = sources
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.resize(width, PAD);
            s
        })
        .collect();
    let encoded = model.encode(&padded)?;
    Ok(NeuralState {
        decoder: encoded.final_state.clone(),
        encoded,
    })
}

pub fn greedy_translate(model: &Seq2Seq, source: &[usize], max_len: usize) -> Result<Decoded> {
    check_max_len(max_len)?;
    let mut out = greedy_decode(model, start(model, &[source.to_vec()])?, 1, max_len)?;
    Ok(out.remove(0))
}

/// Greedy decoding of many sources in one batch; output order matches.
pub fn greedy_translate_batch(model: &Seq2Seq, sources: &[Vec<usize>], max_len: usize) -> Result<Vec<Decoded>> {
    check_max_len(max_len)?;
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    greedy_decode(model, start(model, sources)?, sources.len(), max_len)
}

pub fn beam_translate(model: &Seq2Seq, source: &[usize], width: usize, max_len: usize, alpha: f64) -> Result<Decoded> {
    if width < 1 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    check_max_len(max_len)?;
    beam_decode(model, start(model, &[source.to_vec()])?, width, max_len, alpha)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[derive(Default)]
pub enum Strategy {
    #[default]
    Greedy,
    Beam { width: usize, alpha: f64 },
}


impl FromStr for Strategy {
    type Err = Error;

    /// `greedy` or `beam` (width 5, alpha 0).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::Beam { width: 5, alpha: 0.0 }),
            other => Err(Error::Config(format!("unknown strategy `{other}` (expected greedy|beam)"))),
        }
    }
}

/// Worker count from `SEQFORGE_THREADS`, else the machine's parallelism.
pub fn worker_count(strict: bool) -> usize {
    if strict {
        return 1;
    }
    std::env::var("SEQFORGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

const GREEDY_BATCH: usize = 32;

/// A trained model with its vocabularies, ready for text-to-text use.
pub struct Translator<'a> {
    pub model: &'a Seq2Seq,
    pub source_vocab: &'a Vocabulary,
    pub target_vocab: &'a Vocabulary,
    /// Cap on encoded source length, `<sos>`/`<eos>` included.
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub tokens: Vec<String>,
    pub alignment: AlignmentMap,
}

impl Translator<'_> {
    pub fn encode_source<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut ids = self.source_vocab.encode(tokens, self.max_len);
        while ids.last() == Some(&PAD) {
            ids.pop();
        }
        ids
    }

    fn finish(&self, source: Vec<String>, d: Decoded) -> Translation {
        let tokens = self.target_vocab.decode(&d.tokens);
        let mut src_tokens = vec!["<sos>".to_string()];
        src_tokens.extend(source.iter().take(self.max_len - 2).cloned());
        src_tokens.push("<eos>".into());
        Translation {
            alignment: AlignmentMap {
                source_tokens: src_tokens,
                target_tokens: tokens.clone(),
                weights: d.weights,
            },
            tokens,
        }
    }

    pub fn translate_tokens(&self, source: &[String], strategy: Strategy) -> Result<Translation> {
        let ids = self.encode_source(source);
        let d = match strategy {
            Strategy::Greedy => greedy_translate(self.model, &ids, self.max_len)?,
            Strategy::Beam { width, alpha } => beam_translate(self.model, &ids, width, self.max_len, alpha)?,
        };
        Ok(self.finish(source.to_vec(), d))
    }

    pub fn translate(&self, sentence: &str, strategy: Strategy) -> Result<Translation> {
        self.translate_tokens(&tokenize(sentence), strategy)
    }

    fn translate_group(&self, sources: &[Vec<String>], strategy: Strategy) -> Result<Vec<Translation>> {
        match strategy {
            Strategy::Greedy => {
                let ids: Vec<Vec<usize>> = sources.iter().map(|s| self.encode_source(s)).collect();
                let decoded = greedy_translate_batch(self.model, &ids, self.max_len)?;
                Ok(sources.iter().cloned().zip(decoded).map(|(s, d)| self.finish(s, d)).collect())
            }
            Strategy::Beam { .. } => sources.iter().map(|s| self.translate_tokens(s, strategy)).collect(),
        }
    }

    /// Translates tokenized sentences on up to `workers` threads. Greedy
    /// decoding runs in small batches. Results keep input order, and each
    /// sentence's output does not depend on the worker count or on which
    /// other sentences share its batch.
    pub fn translate_all(&self, sources: &[Vec<String>], strategy: Strategy, workers: usize) -> Result<Vec<Translation>> {
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        let groups: Vec<&[Vec<String>]> = sources.chunks(GREEDY_BATCH).collect();
        let workers = workers.clamp(1, groups.len());
        let per_worker = groups.len().div_ceil(workers);
        let parts: Vec<Result<Vec<Translation>>> = std::thread::scope(|s| {
            let handles: Vec<_> = groups
                .chunks(per_worker)
                .map(|mine| {
                    s.spawn(move || {
                        let mut out = Vec::new();
                        for g in mine {
                            out.extend(self.translate_group(g, strategy)?);
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("translation worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(sources.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Translates `input` (one sentence per line) into `output`, line for
    /// line. Returns the translations so callers can dump alignments.
    pub fn translate_file(&self, input: &Path, output: &Path, strategy: Strategy, workers: usize) -> Result<Vec<Translation>> {
        let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
        let sources: Vec<Vec<String>> = text.lines().map(tokenize).collect();
        let translations = self.translate_all(&sources, strategy, workers)?;
        let mut body = String::new();
        for t in &translations {
            body.push_str(&t.tokens.join(" "));
            body.push('\n');
        }
        std::fs::write(output, body).map_err(|e| Error::io(output, e))?;
        Ok(translations)
    }
}
