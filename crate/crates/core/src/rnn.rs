//! Embedding lookup and LSTM/GRU cells operating on `[batch, dim]` rows.
//!
//! Gate blocks are packed column-wise: an LSTM keeps `[input | forget |
//! candidate | output]`, a GRU keeps `[update | reset | candidate]`, each
//! `hidden_dim` wide. The GRU interpolates as `h = (1 − z)∘h_prev + z∘h̃`
//! and its candidate reads the reset-gated state `r∘h_prev`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!("unknown cell kind `{other}` (expected lstm|gru)"))),
        }
    }
}

/// Scalar weights of one recurrent cell: `gates · (input·hidden + hidden² + hidden)`.
pub fn param_count(kind: CellKind, input_dim: usize, hidden_dim: usize) -> usize {
    kind.gates() * (input_dim * hidden_dim + hidden_dim * hidden_dim + hidden_dim)
}

pub(crate) fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let table = params.add(name, glorot(rng, vocab_size, dim));
        Embedding {
            table,
            vocab_size,
            dim,
        }
    }

    /// Gathers one row per id into a `[ids.len(), dim]` value.
    pub fn forward(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        let table = tape.param(self.table);
        tape.gather(table, ids)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellInit {
    /// Initial bias of the LSTM forget gate; ignored for GRU.
    pub forget_bias: f64,
}

impl Default for CellInit {
    fn default() -> Self {
        CellInit { forget_bias: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnCell {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_input: ParamId,
    pub w_recurrent: ParamId,
    pub bias: ParamId,
}

/// Hidden state of a cell; `cell` is present only for LSTM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Var,
    pub c: Option<Var>,
}

impl RnnCell {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        init: CellInit,
        rng: &mut impl Rng,
    ) -> Self {
        let width = kind.gates() * hidden_dim;
        let w_input = params.add(format!("{prefix}.w_input"), glorot(rng, input_dim, width));
        let w_recurrent = params.add(format!("{prefix}.w_recurrent"), glorot(rng, hidden_dim, width));
        let mut b = Tensor::zeros(&[width]);
        if kind == CellKind::Lstm {
            b.data_mut()[hidden_dim..2 * hidden_dim].fill(init.forget_bias);
        }
        let bias = params.add(format!("{prefix}.bias"), b);
        RnnCell {
            kind,
            input_dim,
            hidden_dim,
            w_input,
            w_recurrent,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        param_count(self.kind, self.input_dim, self.hidden_dim)
    }

    /// Binds the weights to `tape` for one forward pass.
    pub fn bind(&self, tape: &mut Tape<'_>) -> Result<BoundCell> {
        let h = self.hidden_dim;
        let w_input = tape.param(self.w_input);
        let w_recurrent = tape.param(self.w_recurrent);
        let bias = tape.param(self.bias);
        let gru_split = match self.kind {
            CellKind::Lstm => None,
            CellKind::Gru => Some((
                tape.slice_cols(w_recurrent, 0, 2 * h)?,
                tape.slice_cols(w_recurrent, 2 * h, 3 * h)?,
            )),
        };
        Ok(BoundCell {
            kind: self.kind,
            input_dim: self.input_dim,
            hidden_dim: h,
            w_input,
            w_recurrent,
            bias,
            gru_split,
        })
    }
}

/// A cell whose weights are recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundCell {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_input: Var,
    w_recurrent: Var,
    bias: Var,
    gru_split: Option<(Var, Var)>,
}

impl BoundCell {
    /// All-zero initial state for `batch` rows.
    pub fn zero_state(&self, tape: &mut Tape<'_>, batch: usize) -> RecurrentState {
        let h = tape.constant(Tensor::zeros(&[batch, self.hidden_dim]));
        let c = (self.kind == CellKind::Lstm)
            .then(|| tape.constant(Tensor::zeros(&[batch, self.hidden_dim])));
        RecurrentState { h, c }
    }

    /// `x · W_input + bias` for a `[rows, input_dim]` value. Computing this
    /// for every time step at once is cheaper than per step.
    pub fn project_input(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        if tape.shape(x).len() != 2 || tape.shape(x)[1] != self.input_dim {
            return Err(Error::dims("rnn input", tape.shape(x), &[0, self.input_dim]));
        }
        let xw = tape.matmul(x, self.w_input)?;
        tape.add_bias(xw, self.bias)
    }

    pub fn step(&self, tape: &mut Tape<'_>, x: Var, state: &RecurrentState) -> Result<RecurrentState> {
        let projected = self.project_input(tape, x)?;
        self.step_projected(tape, projected, state)
    }

    /// Advances one step given the already-projected input.
    pub fn step_projected(
        &self,
        tape: &mut Tape<'_>,
        projected: Var,
        state: &RecurrentState,
    ) -> Result<RecurrentState> {
        let hd = self.hidden_dim;
        let h_shape = tape.shape(state.h);
        if h_shape.len() != 2 || h_shape[1] != hd || tape.shape(projected)[0] != h_shape[0] {
            return Err(Error::dims("rnn state", tape.shape(projected), h_shape));
        }
        match self.kind {
            CellKind::Lstm => {
                let c_prev = state
                    .c
                    .ok_or_else(|| Error::Contract("LSTM step without a cell state".into()))?;
                let hw = tape.matmul(state.h, self.w_recurrent)?;
                let gates = tape.add(projected, hw)?;
                let i_pre = tape.slice_cols(gates, 0, hd)?;
                let f_pre = tape.slice_cols(gates, hd, 2 * hd)?;
                let g_pre = tape.slice_cols(gates, 2 * hd, 3 * hd)?;
                let o_pre = tape.slice_cols(gates, 3 * hd, 4 * hd)?;
                let i = tape.sigmoid(i_pre);
                let f = tape.sigmoid(f_pre);
                let g = tape.tanh(g_pre);
                let o = tape.sigmoid(o_pre);
                let keep = tape.mul(f, c_prev)?;
                let write = tape.mul(i, g)?;
                let c = tape.add(keep, write)?;
                let c_act = tape.tanh(c);
                let h = tape.mul(o, c_act)?;
                Ok(RecurrentState { h, c: Some(c) })
            }
            CellKind::Gru => {
                let (w_zr, w_n) = self.gru_split.expect("GRU cells are bound with split weights");
                let x_zr = tape.slice_cols(projected, 0, 2 * hd)?;
                let x_n = tape.slice_cols(projected, 2 * hd, 3 * hd)?;
                let h_zr = tape.matmul(state.h, w_zr)?;
                let zr_pre = tape.add(x_zr, h_zr)?;
                let zr = tape.sigmoid(zr_pre);
                let z = tape.slice_cols(zr, 0, hd)?;
                let r = tape.slice_cols(zr, hd, 2 * hd)?;
                let gated = tape.mul(r, state.h)?;
                let h_n = tape.matmul(gated, w_n)?;
                let n_pre = tape.add(x_n, h_n)?;
                let n = tape.tanh(n_pre);
                let delta = tape.sub(n, state.h)?;
                let moved = tape.mul(z, delta)?;
                let h = tape.add(state.h, moved)?;
                Ok(RecurrentState { h, c: None })
            }
        }
    }

    /// Runs the cell over `inputs` (one `[batch, input_dim]` value per step)
    /// and returns the state after every step.
    pub fn unroll(
        &self,
        tape: &mut Tape<'_>,
        inputs: &[Var],
        init: RecurrentState,
    ) -> Result<Vec<RecurrentState>> {
        let mut state = init;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(tape, x, &state)?;
            out.push(state);
        }
        Ok(out)
    }
}
