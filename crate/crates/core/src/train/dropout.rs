use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")))
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random_bool(rate) { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout on a plain tensor. Identity in eval mode or at rate 0.
pub fn dropout(x: &Tensor, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Tensor> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), rate, rng);
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Train-mode dropout applied inside a recorded forward pass.
pub struct Dropout<'r> {
    rate: f64,
    rng: &'r mut ChaCha8Rng,
}

impl<'r> Dropout<'r> {
    pub fn new(rate: f64, rng: &'r mut ChaCha8Rng) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout { rate, rng })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(tape.value(x).len(), self.rate, self.rng);
        tape.mask_mul(x, mask)
    }
}
