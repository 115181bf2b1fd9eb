//! Global attention over encoder states.
//!
//! Energies compare the decoder's previous hidden state with every encoder
//! state, padding positions are masked to `-inf` before normalization, and
//! the context vector is the weight-averaged encoder state.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::rnn::glorot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    /// `h_dec · h_j`
    Dot,
    /// `h_dec · (W_a h_j)`
    General,
    /// `v_a · tanh(W_c [h_dec; h_j])`
    Concat,
    /// `(h_dec · h_j) / √hidden`
    ScaledDot,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [
        ScoreKind::Dot,
        ScoreKind::General,
        ScoreKind::Concat,
        ScoreKind::ScaledDot,
    ];
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Dot => "dot",
            ScoreKind::General => "general",
            ScoreKind::Concat => "concat",
            ScoreKind::ScaledDot => "scaled_dot",
        })
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(ScoreKind::Dot),
            "general" => Ok(ScoreKind::General),
            "concat" => Ok(ScoreKind::Concat),
            "scaled_dot" => Ok(ScoreKind::ScaledDot),
            other => Err(Error::Config(format!(
                "unknown attention kind `{other}` (expected dot|general|concat|scaled_dot)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub kind: ScoreKind,
    pub hidden_dim: usize,
    pub att_dim: usize,
    /// `W_a`, `[hidden, hidden]`, for `general`.
    pub w_general: Option<ParamId>,
    /// `W_c`, `[2·hidden, att_dim]`, for `concat`. Rows `0..hidden` act on
    /// the decoder state, the rest on the encoder state.
    pub w_concat: Option<ParamId>,
    /// `v_a`, `[att_dim, 1]`, for `concat`.
    pub v: Option<ParamId>,
}

impl Attention {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        kind: ScoreKind,
        hidden_dim: usize,
        att_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut att = Attention {
            kind,
            hidden_dim,
            att_dim,
            w_general: None,
            w_concat: None,
            v: None,
        };
        match kind {
            ScoreKind::General => {
                att.w_general = Some(params.add(
                    format!("{prefix}.w_general"),
                    glorot(rng, hidden_dim, hidden_dim),
                ));
            }
            ScoreKind::Concat => {
                att.w_concat = Some(params.add(
                    format!("{prefix}.w_concat"),
                    glorot(rng, 2 * hidden_dim, att_dim),
                ));
                att.v = Some(params.add(format!("{prefix}.v"), glorot(rng, att_dim, 1)));
            }
            ScoreKind::Dot | ScoreKind::ScaledDot => {}
        }
        att
    }

    /// Checks that exactly the parameters the scoring kind needs are present.
    pub fn validate(&self) -> Result<()> {
        let needs_general = self.kind == ScoreKind::General;
        let needs_concat = self.kind == ScoreKind::Concat;
        if self.w_general.is_some() != needs_general
            || self.w_concat.is_some() != needs_concat
            || self.v.is_some() != needs_concat
        {
            return Err(Error::Config(format!(
                "attention parameters do not match scoring kind `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    /// Binds the attention to a `[batch, T, hidden]` block of encoder
    /// states. For `concat`, the encoder half of `W_c` is applied here once.
    pub fn bind(&self, tape: &mut Tape<'_>, encoder_states: Var) -> Result<BoundAttention> {
        self.validate()?;
        let shape = tape.shape(encoder_states).to_vec();
        let [batch, steps, hidden] = shape[..] else {
            return Err(Error::dims("attention", &shape, &[0, 0, self.hidden_dim]));
        };
        if hidden != self.hidden_dim || steps == 0 {
            return Err(Error::dims("attention", &shape, &[batch, 1, self.hidden_dim]));
        }
        let mut bound = BoundAttention {
            kind: self.kind,
            hidden_dim: hidden,
            encoder_states,
            general: None,
            concat: None,
        };
        match self.kind {
            ScoreKind::General => {
                bound.general = Some(tape.param(self.w_general.expect("validated")));
            }
            ScoreKind::Concat => {
                let w = tape.param(self.w_concat.expect("validated"));
                let v = tape.param(self.v.expect("validated"));
                let w_query = tape.slice_rows(w, 0, hidden)?;
                let w_key = tape.slice_rows(w, hidden, 2 * hidden)?;
                let flat = tape.reshape(encoder_states, &[batch * steps, hidden])?;
                let keys = tape.matmul(flat, w_key)?;
                let keys = tape.reshape(keys, &[batch, steps, self.att_dim])?;
                bound.concat = Some(ConcatVars { w_query, keys, v });
            }
            ScoreKind::Dot | ScoreKind::ScaledDot => {}
        }
        Ok(bound)
    }
}

#[derive(Clone, Copy, Debug)]
struct ConcatVars {
    w_query: Var,
    keys: Var,
    v: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundAttention {
    pub kind: ScoreKind,
    pub hidden_dim: usize,
    pub encoder_states: Var,
    general: Option<Var>,
    concat: Option<ConcatVars>,
}

impl BoundAttention {
    /// Alignment energies `[batch, T]` for decoder states `[batch, hidden]`.
    pub fn score(&self, tape: &mut Tape<'_>, h_dec: Var) -> Result<Var> {
        let enc = self.encoder_states;
        match self.kind {
            ScoreKind::Dot => tape.batch_dot(enc, h_dec),
            ScoreKind::ScaledDot => {
                let e = tape.batch_dot(enc, h_dec)?;
                Ok(tape.scale(e, 1.0 / (self.hidden_dim as f64).sqrt()))
            }
            ScoreKind::General => {
                // h_dec · (W_a h_j) = (h_dec W_a) · h_j in row-vector form
                let q = tape.matmul(h_dec, self.general.expect("bound for general"))?;
                tape.batch_dot(enc, q)
            }
            ScoreKind::Concat => {
                let ConcatVars { w_query, keys, v } = self.concat.expect("bound for concat");
                let shape = tape.shape(keys).to_vec();
                let q = tape.matmul(h_dec, w_query)?;
                let pre = tape.add_group(keys, q)?;
                let act = tape.tanh(pre);
                let flat = tape.reshape(act, &[shape[0] * shape[1], shape[2]])?;
                let e = tape.matmul(flat, v)?;
                tape.reshape(e, &[shape[0], shape[1]])
            }
        }
    }

    /// Energies → weights → context for one decoder step.
    pub fn step(&self, tape: &mut Tape<'_>, h_dec: Var, valid: &[bool]) -> Result<(Var, Var)> {
        let energies = self.score(tape, h_dec)?;
        let weights = attend(tape, energies, valid)?;
        let ctx = context(tape, weights, self.encoder_states)?;
        Ok((weights, ctx))
    }
}

/// Softmax over unmasked positions of `[batch, T]` energies. `valid` is
/// row-major with `false` marking encoder padding.
pub fn attend(tape: &mut Tape<'_>, energies: Var, valid: &[bool]) -> Result<Var> {
    tape.masked_softmax(energies, valid)
}

/// `C_t = Σ_j a_tj h_j` for each batch row.
pub fn context(tape: &mut Tape<'_>, weights: Var, encoder_states: Var) -> Result<Var> {
    tape.weighted_sum(weights, encoder_states)
}

/// Attention weights recorded while decoding one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentMap {
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    /// One row per emitted target token, one column per source position.
    pub weights: Vec<Vec<f64>>,
}

impl AlignmentMap {
    /// Header row of source tokens, then one row per target token.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target");
        for s in &self.source_tokens {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for (tok, row) in self.target_tokens.iter().zip(&self.weights) {
            out.push_str(tok);
            for w in row {
                write!(out, ",{w}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    /// Source position with the largest weight for each target row.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.weights
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &w)| if w > best.1 { (j, w) } else { best })
                    .0
            })
            .collect()
    }
}
