use rand::Rng;
use rand_chacha::ChaCha8Rng;
use seqforge::attention::ScoreKind;
use seqforge::model::{Architecture, Seq2Seq};
use seqforge::rnn::CellKind;
use seqforge::text::{EOS, SOS};

pub fn random_model(r: &mut ChaCha8Rng, target_vocab: usize) -> Seq2Seq {
    let attention = match r.random_range(0..5) {
        0 => None,
        k => Some(ScoreKind::ALL[k - 1]),
    };
    let cell = if r.random_bool(0.5) { CellKind::Lstm } else { CellKind::Gru };
    let hidden = r.random_range(2..=6);
    let arch = Architecture {
        cell,
        attention,
        embed_dim: r.random_range(2..=5),
        hidden_dim: hidden,
        att_dim: r.random_range(2..=6),
        source_vocab: 9,
        target_vocab,
        project_context: r.random_bool(0.7),
        forget_bias: 1.0,
    };
    let mut model = Seq2Seq::new(arch, r.random()).unwrap();
    // sharpen the output layer so distributions are far from uniform
    let id = model.params.find("output.weight").unwrap();
    model.params.get_mut(id).data_mut().iter_mut().for_each(|w| *w *= 4.0);
    model
}

pub fn random_source(r: &mut ChaCha8Rng, vocab: usize) -> Vec<usize> {
    let len = r.random_range(0..=5);
    let mut s = vec![SOS];
    s.extend((0..len).map(|_| r.random_range(3..vocab)));
    s.push(EOS);
    s
}
