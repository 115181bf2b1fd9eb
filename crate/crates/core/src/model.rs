//! The encoder-decoder network.
//!
//! Encoding and the per-step decoder graph are shared between training
//! (teacher forcing on a batch) and inference (one step at a time on plain
//! tensors), so both paths compute exactly the same function.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{Attention, BoundAttention, ScoreKind};
use crate::autograd::{Gradients, ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::rnn::{glorot, BoundCell, CellInit, CellKind, Embedding, RecurrentState, RnnCell};
use crate::tensor::Tensor;
use crate::text::{EOS, NUM_SPECIALS, PAD, SOS};
use crate::train::Dropout;

/// Everything needed to rebuild the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub cell: CellKind,
    /// `None` disables attention: the decoder sees only its own state.
    pub attention: Option<ScoreKind>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Width of the additive (`concat`) scoring layer.
    pub att_dim: usize,
    pub source_vocab: usize,
    pub target_vocab: usize,
    /// Project logits from `[h; context]` rather than `h` alone.
    pub project_context: bool,
    pub forget_bias: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.att_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        for (side, size) in [("source", self.source_vocab), ("target", self.target_vocab)] {
            if size < NUM_SPECIALS {
                return Err(Error::Config(format!(
                    "{side} vocabulary has {size} entries, fewer than the special tokens"
                )));
            }
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::Config("forget_bias must be finite".into()));
        }
        Ok(())
    }

    pub fn decoder_input_dim(&self) -> usize {
        self.embed_dim + if self.attention.is_some() { self.hidden_dim } else { 0 }
    }

    pub fn projection_dim(&self) -> usize {
        if self.attention.is_some() && self.project_context {
            2 * self.hidden_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Source and target id rows, each padded with `<pad>` to a common width.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub source: Vec<Vec<usize>>,
    pub target: Vec<Vec<usize>>,
}

impl Batch {
    /// Pads every row to the longest one on its side.
    pub fn new(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let pad = |rows: Vec<&Vec<usize>>| {
            let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
            rows.into_iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.resize(width, PAD);
                    r
                })
                .collect::<Vec<_>>()
        };
        Ok(Batch {
            source: pad(pairs.iter().map(|p| &p.0).collect()),
            target: pad(pairs.iter().map(|p| &p.1).collect()),
        })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Decoder state as plain tensors, `[batch, hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Tensor,
    pub c: Option<Tensor>,
}

impl DecoderState {
    pub fn batch(&self) -> usize {
        self.h.rows()
    }

    /// New state made of the given rows, in order (repeats allowed).
    pub fn select(&self, rows: &[usize]) -> DecoderState {
        DecoderState {
            h: pick_rows(&self.h, rows),
            c: self.c.as_ref().map(|c| pick_rows(c, rows)),
        }
    }
}

fn pick_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let mut shape = t.shape().to_vec();
    let width: usize = shape[1..].iter().product();
    let mut data = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
    }
    shape[0] = rows.len();
    Tensor::new(shape, data).expect("row selection keeps the width")
}

/// Encoder output for a batch of sources.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSource {
    /// `[batch, T, hidden]`
    pub states: Tensor,
    /// `[batch * T]`, false at `<pad>` positions.
    pub valid: Vec<bool>,
    pub final_state: DecoderState,
}

impl EncodedSource {
    pub fn batch(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.states.shape()[1]
    }

    /// Re-batches by picking source rows, e.g. one copy per beam hypothesis.
    pub fn select(&self, rows: &[usize]) -> EncodedSource {
        let t = self.steps();
        let mut valid = Vec::with_capacity(rows.len() * t);
        for &r in rows {
            valid.extend_from_slice(&self.valid[r * t..(r + 1) * t]);
        }
        EncodedSource {
            states: pick_rows(&self.states, rows),
            valid,
            final_state: self.final_state.select(rows),
        }
    }

    /// Number of real (non-pad) positions in row `b`.
    pub fn source_len(&self, b: usize) -> usize {
        let t = self.steps();
        self.valid[b * t..(b + 1) * t].iter().filter(|v| **v).count()
    }
}

/// Result of one inference step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    /// `[batch, target_vocab]`
    pub logits: Tensor,
    pub state: DecoderState,
    /// `[batch, T]` attention weights, absent without attention.
    pub weights: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub arch: Architecture,
    pub params: ParamSet,
    source_embedding: Embedding,
    target_embedding: Embedding,
    encoder: RnnCell,
    decoder: RnnCell,
    attention: Option<Attention>,
    w_out: ParamId,
    b_out: ParamId,
}

/// Graph pieces bound once per forward pass.
struct Bound {
    decoder: BoundCell,
    attention: Option<BoundAttention>,
    w_out: Var,
    b_out: Var,
}

struct StepVars {
    logits: Var,
    state: RecurrentState,
    weights: Option<Var>,
}

impl Seq2Seq {
    /// Fresh Glorot-initialized model; parameter values depend only on
    /// `arch` and `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let init = CellInit {
            forget_bias: arch.forget_bias,
        };
        let (e, h) = (arch.embed_dim, arch.hidden_dim);
        let source_embedding = Embedding::new(&mut params, "source_embedding", arch.source_vocab, e, &mut rng);
        let target_embedding = Embedding::new(&mut params, "target_embedding", arch.target_vocab, e, &mut rng);
        let encoder = RnnCell::new(&mut params, "encoder", arch.cell, e, h, init, &mut rng);
        let decoder = RnnCell::new(&mut params, "decoder", arch.cell, arch.decoder_input_dim(), h, init, &mut rng);
        let attention = arch
            .attention
            .map(|kind| Attention::new(&mut params, "attention", kind, h, arch.att_dim, &mut rng));
        let w_out = params.add("output.weight", glorot(&mut rng, arch.projection_dim(), arch.target_vocab));
        let b_out = params.add("output.bias", Tensor::zeros(&[arch.target_vocab]));
        Ok(Seq2Seq {
            arch,
            params,
            source_embedding,
            target_embedding,
            encoder,
            decoder,
            attention,
            w_out,
            b_out,
        })
    }

    /// Parameters held by the two recurrent cells.
    pub fn recurrent_param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    pub fn total_param_count(&self) -> usize {
        self.params.numel()
    }

    fn bind(&self, tape: &mut Tape<'_>, encoder_states: Var) -> Result<Bound> {
        let attention = match &self.attention {
            Some(a) => Some(a.bind(tape, encoder_states)?),
            None => None,
        };
        Ok(Bound {
            decoder: self.decoder.bind(tape)?,
            attention,
            w_out: tape.param(self.w_out),
            b_out: tape.param(self.b_out),
        })
    }

    /// Runs the encoder over padded rows. States are carried unchanged
    /// through `<pad>` positions, so the final state is the one after the
    /// last real token.
    fn encode_graph(
        &self,
        tape: &mut Tape<'_>,
        source: &[Vec<usize>],
    ) -> Result<(Var, Vec<bool>, RecurrentState)> {
        let batch = source.len();
        let steps = source.first().map_or(0, Vec::len);
        if batch == 0 || steps == 0 {
            return Err(Error::Domain("cannot encode an empty source sequence".into()));
        }
        let mut valid = Vec::with_capacity(batch * steps);
        for (b, row) in source.iter().enumerate() {
            if row.len() != steps {
                return Err(Error::dims("encode", &[batch, steps], &[b, row.len()]));
            }
            if row.iter().all(|&id| id == PAD) {
                return Err(Error::Domain(format!("source row {b} is all padding")));
            }
            valid.extend(row.iter().map(|&id| id != PAD));
        }
        // time-major so each step is a contiguous row block
        let ids: Vec<usize> = (0..steps)
            .flat_map(|t| source.iter().map(move |row| row[t]))
            .collect();
        let cell = self.encoder.bind(tape)?;
        let embedded = self.source_embedding.forward(tape, &ids)?;
        let projected = cell.project_input(tape, embedded)?;
        let mut state = cell.zero_state(tape, batch);
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = tape.slice_rows(projected, t * batch, (t + 1) * batch)?;
            let next = cell.step_projected(tape, x, &state)?;
            let keep: Vec<bool> = (0..batch).map(|b| valid[b * steps + t]).collect();
            state = if keep.iter().all(|k| *k) {
                next
            } else {
                RecurrentState {
                    h: tape.select_rows(&keep, next.h, state.h)?,
                    c: match (next.c, state.c) {
                        (Some(n), Some(o)) => Some(tape.select_rows(&keep, n, o)?),
                        _ => None,
                    },
                }
            };
            outputs.push(state.h);
        }
        let states = tape.stack(&outputs)?;
        Ok((states, valid, state))
    }

    fn step_graph(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        valid: &[bool],
        prev: &[usize],
        state: &RecurrentState,
        dropout: &mut Option<&mut Dropout<'_>>,
    ) -> Result<StepVars> {
        let embedded = self.target_embedding.forward(tape, prev)?;
        let (input, attended) = match &bound.attention {
            Some(att) => {
                let (weights, ctx) = att.step(tape, state.h, valid)?;
                (tape.concat_cols(&[embedded, ctx])?, Some((weights, ctx)))
            }
            None => (embedded, None),
        };
        let input = apply_dropout(tape, input, dropout)?;
        let next = bound.decoder.step(tape, input, state)?;
        let features = match attended {
            Some((_, ctx)) if self.arch.project_context => tape.concat_cols(&[next.h, ctx])?,
            _ => next.h,
        };
        let features = apply_dropout(tape, features, dropout)?;
        let projected = tape.matmul(features, bound.w_out)?;
        let logits = tape.add_bias(projected, bound.b_out)?;
        Ok(StepVars {
            logits,
            state: next,
            weights: attended.map(|(w, _)| w),
        })
    }

    /// Records the teacher-forced forward pass and returns the summed
    /// cross-entropy together with the number of counted target positions.
    pub fn loss_graph(
        &self,
        tape: &mut Tape<'_>,
        batch: &Batch,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(Var, usize)> {
        if batch.target.len() != batch.len() {
            return Err(Error::dims("batch", &[batch.len()], &[batch.target.len()]));
        }
        let width = batch.target.first().map_or(0, Vec::len);
        for (b, row) in batch.target.iter().enumerate() {
            if row.len() != width {
                return Err(Error::dims("target batch", &[batch.len(), width], &[b, row.len()]));
            }
            if !row.iter().any(|&id| !matches!(id, PAD | SOS | EOS)) {
                return Err(Error::Domain(format!("target row {b} holds only special tokens")));
            }
        }
        let (states, valid, init) = self.encode_graph(tape, &batch.source)?;
        let bound = self.bind(tape, states)?;
        let mut state = init;
        let mut total: Option<Var> = None;
        let mut counted_positions = 0;
        for t in 0..width - 1 {
            let prev: Vec<usize> = batch.target.iter().map(|r| r[t]).collect();
            let gold: Vec<usize> = batch.target.iter().map(|r| r[t + 1]).collect();
            let counted: Vec<bool> = gold.iter().map(|&id| id != PAD).collect();
            let n = counted.iter().filter(|c| **c).count();
            if n == 0 {
                break;
            }
            counted_positions += n;
            let step = self.step_graph(tape, &bound, &valid, &prev, &state, &mut dropout)?;
            let ce = tape.cross_entropy(step.logits, &gold, &counted)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, ce)?,
                None => ce,
            });
            state = step.state;
        }
        let total = total.ok_or_else(|| Error::Domain("target has no position to predict".into()))?;
        Ok((total, counted_positions))
    }

    /// Mean cross-entropy over non-pad target positions and its gradient
    /// with respect to every parameter.
    pub fn loss_and_gradients(
        &self,
        batch: &Batch,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::with_params(&self.params);
        let (sum, count) = self.loss_graph(&mut tape, batch, dropout)?;
        let mean = tape.scale(sum, 1.0 / count as f64);
        let grads = tape.backward(mean)?;
        Ok((tape.value(mean).data()[0], grads))
    }

    /// Mean loss of the batch without dropout and without a backward pass.
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::with_params(&self.params);
        let (sum, count) = self.loss_graph(&mut tape, batch, None)?;
        Ok(tape.value(sum).data()[0] / count as f64)
    }

    /// Loss of one pair; both sides are expected to carry `<sos>`/`<eos>`.
    pub fn teacher_forced_loss(&self, source: &[usize], target: &[usize]) -> Result<f64> {
        self.batch_loss(&Batch::new(&[(source.to_vec(), target.to_vec())])?)
    }

    /// Inference-mode encoding of padded source rows.
    pub fn encode(&self, source: &[Vec<usize>]) -> Result<EncodedSource> {
        let mut tape = Tape::with_params(&self.params);
        let (states, valid, last) = self.encode_graph(&mut tape, source)?;
        Ok(EncodedSource {
            states: plain(&tape, states),
            valid,
            final_state: DecoderState {
                h: plain(&tape, last.h),
                c: last.c.map(|c| plain(&tape, c)),
            },
        })
    }

    /// One decoder step for every row of `encoded`, fed `prev` tokens.
    pub fn decode_step(
        &self,
        prev: &[usize],
        state: &DecoderState,
        encoded: &EncodedSource,
    ) -> Result<StepOutput> {
        let batch = encoded.batch();
        let h = self.arch.hidden_dim;
        let state_ok = state.h.shape() == [batch, h]
            && state.c.as_ref().map(|c| c.shape() == [batch, h]).unwrap_or(true)
            && state.c.is_some() == (self.arch.cell == CellKind::Lstm);
        if prev.len() != batch || !state_ok {
            return Err(Error::Contract(format!(
                "decode step got {} tokens and state {:?} for a batch of {batch} with hidden size {h}",
                prev.len(),
                state.h.shape()
            )));
        }
        if let Some(&bad) = prev.iter().find(|&&id| id >= self.arch.target_vocab) {
            return Err(Error::Index {
                what: "target vocabulary",
                index: bad,
                size: self.arch.target_vocab,
            });
        }
        let mut tape = Tape::with_params(&self.params);
        let states = tape.constant(encoded.states.clone());
        let bound = self.bind(&mut tape, states)?;
        let current = RecurrentState {
            h: tape.constant(state.h.clone()),
            c: state.c.clone().map(|c| tape.constant(c)),
        };
        let out = self.step_graph(&mut tape, &bound, &encoded.valid, prev, &current, &mut None)?;
        Ok(StepOutput {
            logits: plain(&tape, out.logits),
            state: DecoderState {
                h: plain(&tape, out.state.h),
                c: out.state.c.map(|c| plain(&tape, c)),
            },
            weights: out.weights.map(|w| plain(&tape, w)),
        })
    }

    /// Copies named values into the parameters after checking that names,
    /// order and shapes all match this model's layout.
    pub fn assign_params(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::Integrity(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                named.len()
            )));
        }
        let ids: Vec<ParamId> = self.params.ids().collect();
        for (&id, (found, value)) in ids.iter().zip(&named) {
            let (name, have) = (self.params.name(id), self.params.get(id));
            if name != found || have.shape() != value.shape() {
                return Err(Error::Integrity(format!(
                    "parameter `{found}` {:?} does not match `{name}` {:?}",
                    value.shape(),
                    have.shape()
                )));
            }
        }
        for (id, (_, value)) in ids.into_iter().zip(named) {
            self.params.get_mut(id).data_mut().copy_from_slice(value.data());
        }
        Ok(())
    }
}

fn plain(tape: &Tape<'_>, v: Var) -> Tensor {
    let t = tape.value(v);
    Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("copy of a valid tensor")
}

fn apply_dropout(tape: &mut Tape<'_>, x: Var, dropout: &mut Option<&mut Dropout<'_>>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => Ok(x),
    }
}
