use rand::Rng;
use rand_chacha::ChaCha8Rng;
use seqforge::attention::{Attention, ScoreKind};
use seqforge::autograd::{ParamSet, Var};
use seqforge::model::{Architecture, Batch, Seq2Seq};
use seqforge::rnn::{CellInit, CellKind, Embedding, RnnCell};
use seqforge::text::{EOS, SOS};

use super::{max_grad_error, normal, probe, rng};

pub fn random_mask(r: &mut impl Rng, batch: usize, steps: usize) -> Vec<bool> {
    (0..batch)
        .flat_map(|_| {
            let len = r.random_range(1..=steps);
            (0..steps).map(move |t| t < len)
        })
        .collect()
}

pub fn cell_check(kind: CellKind, steps: usize, seed: u64) -> f64 {
    let (batch, input, hidden) = (2, 3, 4);
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let cell = RnnCell::new(&mut ps, "cell", kind, input, hidden, CellInit::default(), &mut r);
    let xs: Vec<_> = (0..steps)
        .map(|i| ps.add(format!("x{i}"), normal(&mut r, &[batch, input])))
        .collect();
    let h0 = ps.add("h0", normal(&mut r, &[batch, hidden]));
    let c0 = ps.add("c0", normal(&mut r, &[batch, hidden]));
    let (ph, pc) = (normal(&mut r, &[batch, hidden]), normal(&mut r, &[batch, hidden]));
    max_grad_error(&mut ps, |t| {
        let bound = cell.bind(t).unwrap();
        let inputs: Vec<Var> = xs.iter().map(|&x| t.param(x)).collect();
        let mut init = bound.zero_state(t, batch);
        init.h = t.param(h0);
        if kind == CellKind::Lstm {
            init.c = Some(t.param(c0));
        }
        let states = bound.unroll(t, &inputs, init).unwrap();
        let last = states.last().unwrap();
        let mut loss = probe(t, last.h, &ph);
        if let Some(c) = last.c {
            let lc = probe(t, c, &pc);
            loss = t.add(loss, lc).unwrap();
        }
        loss
    })
}

pub fn attention_check(kind: ScoreKind, seed: u64) -> f64 {
    let (batch, steps, hidden) = (2, 5, 4);
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let att = Attention::new(&mut ps, "att", kind, hidden, 3, &mut r);
    for id in [att.w_general, att.w_concat, att.v].into_iter().flatten() {
        let shape = ps.get(id).shape().to_vec();
        ps.get_mut(id).data_mut().copy_from_slice(normal(&mut r, &shape).data());
    }
    let enc = ps.add("enc", normal(&mut r, &[batch, steps, hidden]));
    let query = ps.add("query", normal(&mut r, &[batch, hidden]));
    let valid = random_mask(&mut r, batch, steps);
    let (pw, pc) = (normal(&mut r, &[batch, steps]), normal(&mut r, &[batch, hidden]));
    max_grad_error(&mut ps, |t| {
        let e = t.param(enc);
        let q = t.param(query);
        let bound = att.bind(t, e).unwrap();
        let (w, ctx) = bound.step(t, q, &valid).unwrap();
        let lw = probe(t, w, &pw);
        let lc = probe(t, ctx, &pc);
        t.add(lw, lc).unwrap()
    })
}


pub fn tiny_model(cell: CellKind, attention: Option<ScoreKind>, seed: u64) -> Seq2Seq {
    let arch = Architecture {
        cell,
        attention,
        embed_dim: 4,
        hidden_dim: 5,
        att_dim: 5,
        source_vocab: 12,
        target_vocab: 12,
        project_context: true,
        forget_bias: 1.0,
    };
    Seq2Seq::new(arch, seed).unwrap()
}

pub fn tiny_batch(r: &mut ChaCha8Rng) -> Batch {
    let row = |r: &mut ChaCha8Rng, len: usize| {
        let mut v = vec![SOS];
        v.extend((0..len).map(|_| r.random_range(3..12)));
        v.push(EOS);
        v
    };
    let pairs: Vec<_> = (0..2)
        .map(|i| {
            let n = if i == 0 { 4 } else { r.random_range(1..=4) };
            (row(r, n), row(r, 4 - i))
        })
        .collect();
    Batch::new(&pairs).unwrap()
}

pub fn end_to_end(cell: CellKind, attention: Option<ScoreKind>, seed: u64) -> f64 {
    let model = tiny_model(cell, attention, seed);
    let mut r = rng(1000 + seed);
    let batch = tiny_batch(&mut r);
    let mut ps = model.params.clone();
    max_grad_error(&mut ps, |t| {
        let (sum, count) = model.loss_graph(t, &batch, None).unwrap();
        t.scale(sum, 1.0 / count as f64)
    })
}

pub fn embedding_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let emb = Embedding::new(&mut ps, "emb", 7, 3, &mut r);
    ps.get_mut(emb.table).data_mut().copy_from_slice(normal(&mut r, &[7, 3]).data());
    let ids: Vec<usize> = (0..6).map(|_| r.random_range(0..7)).collect();
    let probe_w = normal(&mut r, &[6, 3]);
    max_grad_error(&mut ps, |t| {
        let x = emb.forward(t, &ids).unwrap();
        let y = t.tanh(x);
        probe(t, y, &probe_w)
    })
}

pub fn projection_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let x = ps.add("x", normal(&mut r, &[3, 5]));
    let w = ps.add("w", normal(&mut r, &[5, 6]));
    let b = ps.add("b", normal(&mut r, &[6]));
    let p = normal(&mut r, &[3, 6]);
    max_grad_error(&mut ps, |t| {
        let (xv, wv, bv) = (t.param(x), t.param(w), t.param(b));
        let y = t.matmul(xv, wv).unwrap();
        let y = t.add_bias(y, bv).unwrap();
        probe(t, y, &p)
    })
}

pub fn loss_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let logits = ps.add("logits", normal(&mut r, &[5, 7]));
    let targets: Vec<usize> = (0..5).map(|_| r.random_range(0..7)).collect();
    let counted: Vec<bool> = (0..5).map(|i| i == 0 || r.random_bool(0.7)).collect();
    max_grad_error(&mut ps, |t| {
        let l = t.param(logits);
        t.cross_entropy(l, &targets, &counted).unwrap()
    })
}

/// Worst relative error per layer for one seed.
pub fn layer_errors(seed: u64) -> Vec<(String, f64)> {
    let mut out = vec![
        ("embedding".to_string(), embedding_check(seed)),
        ("lstm".to_string(), cell_check(CellKind::Lstm, 3, seed)),
        ("gru".to_string(), cell_check(CellKind::Gru, 3, seed)),
    ];
    for kind in ScoreKind::ALL {
        out.push((format!("attention/{kind}"), attention_check(kind, seed)));
    }
    out.push(("projection".to_string(), projection_check(seed)));
    out.push(("loss".to_string(), loss_check(seed)));
    out
}
