//! Teacher-forced training with Adam, dropout, history tracking and
//! checkpoints.

mod checkpoint;
mod config;
mod dropout;
mod history;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{TrainingConfig, CONFIG_KEYS};
pub use dropout::{check_rate, dropout, dropout_mask, Dropout, Mode};
pub use history::{EpochRecord, TrainingHistory, HISTORY_CSV_HEADER};

use crate::decode::{worker_count, Strategy, Translator};
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, Smoothing, DEFAULT_MAX_N};
use crate::model::{Batch, Seq2Seq};
use crate::optim::AdamState;
use crate::text::{CorpusSplit, ParallelCorpus, Side, Vocabulary, PAD};

/// Source and target id sequences with `<sos>`/`<eos>` and no padding.
pub type EncodedPair = (Vec<usize>, Vec<usize>);

/// Model, vocabularies, optimizer and history: everything a checkpoint
/// holds and everything needed to continue training.
#[derive(Clone, Debug)]
pub struct TrainingState {
    pub config: TrainingConfig,
    pub model: Seq2Seq,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
    pub optimizer: AdamState,
    pub history: TrainingHistory,
}

impl TrainingState {
    /// Builds vocabularies from `train` and a freshly initialized model.
    pub fn new(train: &ParallelCorpus, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let source_vocab = Vocabulary::build(train, Side::Source, config.min_count)?;
        let target_vocab = Vocabulary::build(train, Side::Target, config.min_count)?;
        let arch = config.architecture(source_vocab.len(), target_vocab.len());
        let model = Seq2Seq::new(arch, config.seed)?;
        let optimizer = AdamState::new(&model.params, config.adam())?;
        Ok(TrainingState {
            config,
            model,
            source_vocab,
            target_vocab,
            optimizer,
            history: TrainingHistory::default(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn translator(&self) -> Translator<'_> {
        Translator {
            model: &self.model,
            source_vocab: &self.source_vocab,
            target_vocab: &self.target_vocab,
            max_len: self.config.max_len,
        }
    }

    pub fn encode_pairs(&self, corpus: &ParallelCorpus) -> Vec<EncodedPair> {
        let trim = |mut ids: Vec<usize>| {
            while ids.last() == Some(&PAD) {
                ids.pop();
            }
            ids
        };
        corpus
            .pairs
            .iter()
            .map(|p| {
                (
                    trim(self.source_vocab.encode(&p.source, self.config.max_len)),
                    trim(self.target_vocab.encode(&p.target, self.config.max_len)),
                )
            })
            .collect()
    }

    /// Batch index lists for `epoch` (0-based). The order depends only on
    /// the seed and the epoch number, which keeps resumed runs on the same
    /// trajectory.
    fn epoch_batches(&self, data: &[EncodedPair], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let bs = self.config.batch_size;
        if self.config.bucketing && !self.config.strict {
            order.sort_by_key(|&i| (data[i].0.len(), data[i].1.len()));
            let mut batches: Vec<Vec<usize>> = order.chunks(bs).map(<[usize]>::to_vec).collect();
            batches.shuffle(rng);
            batches
        } else {
            order.chunks(bs).map(<[usize]>::to_vec).collect()
        }
    }

    /// One pass over `data`; returns the token-weighted mean loss.
    pub fn run_epoch(&mut self, data: &[EncodedPair]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Domain("no training pairs".into()));
        }
        let epoch = self.history.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let batches = self.epoch_batches(data, &mut rng);
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for (b, idx) in batches.iter().enumerate() {
            let pairs: Vec<EncodedPair> = idx.iter().map(|&i| data[i].clone()).collect();
            let batch = Batch::new(&pairs)?;
            let count: usize = batch
                .target
                .iter()
                .map(|r| r[1..].iter().filter(|&&id| id != PAD).count())
                .sum();
            let (loss, grads) = if self.config.dropout_rate > 0.0 {
                let mut d = Dropout::new(self.config.dropout_rate, &mut rng)?;
                self.model.loss_and_gradients(&batch, Some(&mut d))?
            } else {
                self.model.loss_and_gradients(&batch, None)?
            };
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b,
                });
            }
            self.model.params.accumulate(&grads)?;
            if let Some(limit) = self.config.grad_clip {
                clip_gradients(&mut self.model.params, limit);
            }
            self.optimizer.step(&mut self.model.params)?;
            self.model.params.zero_grads();
            loss_sum += loss * count as f64;
            tokens += count;
        }
        let mean = loss_sum / tokens as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                batch: batches.len().saturating_sub(1),
            });
        }
        Ok(mean)
    }

    /// Greedy corpus BLEU of the current model on `corpus`.
    pub fn bleu_on(&self, corpus: &ParallelCorpus) -> Result<f64> {
        if corpus.is_empty() {
            return Ok(0.0);
        }
        let sources: Vec<Vec<String>> = corpus.pairs.iter().map(|p| p.source.clone()).collect();
        let out = self
            .translator()
            .translate_all(&sources, Strategy::Greedy, worker_count(self.config.strict))?;
        let cands: Vec<Vec<String>> = out.into_iter().map(|t| t.tokens).collect();
        let refs: Vec<Vec<Vec<String>>> = corpus.pairs.iter().map(|p| vec![p.target.clone()]).collect();
        Ok(corpus_bleu(&cands, &refs, DEFAULT_MAX_N, Smoothing::None)?.score)
    }

    /// Trains until `config.epochs` epochs are recorded in total, calling
    /// `on_epoch` after each one (e.g. to write a checkpoint).
    pub fn train(
        &mut self,
        train: &ParallelCorpus,
        valid: Option<&ParallelCorpus>,
        mut on_epoch: impl FnMut(&TrainingState) -> Result<()>,
    ) -> Result<()> {
        let data = self.encode_pairs(train);
        while self.history.len() < self.config.epochs {
            let start = Instant::now();
            let loss = self.run_epoch(&data)?;
            let seconds = start.elapsed().as_secs_f64();
            let epoch = self.history.len() + 1;
            let bleu = match valid {
                Some(v) if self.config.eval_every > 0 && epoch.is_multiple_of(self.config.eval_every) => {
                    Some(self.bleu_on(v)?)
                }
                _ => None,
            };
            log::info!(
                "epoch {epoch}: loss {loss:.4}{} ({seconds:.2}s)",
                bleu.map(|b| format!(", valid BLEU {b:.4}")).unwrap_or_default()
            );
            self.history.epochs.push(EpochRecord {
                epoch,
                loss,
                bleu,
                seconds,
            });
            on_epoch(self)?;
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `limit`.
pub fn clip_gradients(params: &mut crate::autograd::ParamSet, limit: f64) {
    let norm = params.grad_norm();
    if norm > limit {
        let scale = limit / norm;
        for t in params.tensors_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|x| *x *= scale);
            }
        }
    }
}

/// Splits `corpus` with the config's seed, builds vocabularies from the
/// training part and trains for `config.epochs` epochs with validation
/// BLEU on the held-out part.
pub fn train(corpus: &ParallelCorpus, config: TrainingConfig) -> Result<(TrainingState, CorpusSplit)> {
    config.validate()?;
    let split = corpus.split(config.seed, config.test_size)?;
    let mut state = TrainingState::new(&split.train, config)?;
    state.train(&split.train, Some(&split.valid), |_| Ok(()))?;
    Ok((state, split))
}
