//! Recurrent encoder-decoder machine translation with global attention,
//! built on a small reverse-mode autograd over dense `f64` tensors.
//!
//! The pipeline runs corpus loading and tokenization ([`text`]), LSTM/GRU
//! cells ([`rnn`]) with dot/general/concat/scaled-dot attention
//! ([`attention`]) inside a [`model::Seq2Seq`], teacher-forced Adam training
//! ([`train`]), greedy and beam decoding ([`decode`]), and BLEU/chrF scoring
//! ([`metrics`]).

pub mod attention;
pub mod autograd;
pub mod decode;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rnn;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
