#![allow(dead_code)]

pub mod layers;
pub mod models;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use seqforge::autograd::{ParamSet, Tape, Var};
use seqforge::model::Seq2Seq;
use seqforge::tensor::log_softmax;
use seqforge::text::{ParallelCorpus, EOS, PAD, SOS};
use seqforge::attention::ScoreKind;
use seqforge::decode::Strategy;
use seqforge::train::{TrainingConfig, TrainingState};
use seqforge::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Largest relative error between the tape gradient of the scalar built by
/// `f` and central differences, over every element of every parameter.
pub fn max_grad_error(params: &mut ParamSet, f: impl Fn(&mut Tape<'_>) -> Var) -> f64 {
    let analytic = {
        let mut tape = Tape::with_params(params);
        let loss = f(&mut tape);
        tape.backward(loss).unwrap()
    };
    let eval = |ps: &ParamSet| {
        let mut tape = Tape::with_params(ps);
        let loss = f(&mut tape);
        tape.value(loss).data()[0]
    };
    let ids: Vec<_> = params.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let grad = analytic.param(id).map(<[f64]>::to_vec);
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let plus = eval(params);
            params.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let minus = eval(params);
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad.as_ref().map_or(0.0, |g| g[i]);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}

/// `sum(x * r)` for a fixed random `r`, so every output element gets a
/// distinct upstream gradient.
pub fn probe(tape: &mut Tape<'_>, x: Var, r: &Tensor) -> Var {
    let r = tape.constant(r.clone());
    let prod = tape.mul(x, r).unwrap();
    tape.sum(prod)
}

/// Distinct letter-only words, so the tokenizer keeps them intact.
pub fn words(n: usize) -> Vec<String> {
    const C: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
    const V: [&str; 5] = ["a", "e", "i", "o", "u"];
    let out: Vec<String> = C.iter().flat_map(|c| V.iter().map(move |v| format!("{c}{v}"))).collect();
    assert!(n <= out.len());
    out.into_iter().take(n).collect()
}

pub fn random_sentences(rng: &mut impl Rng, vocab: usize, max_len: usize, n: usize) -> Vec<Vec<String>> {
    let w = words(vocab);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len).map(|_| w[rng.random_range(0..vocab)].clone()).collect()
        })
        .collect()
}

pub fn corpus_of(pairs: &[(Vec<String>, Vec<String>)]) -> ParallelCorpus {
    let lines: Vec<String> = pairs.iter().map(|(s, t)| format!("{}\t{}", s.join(" "), t.join(" "))).collect();
    ParallelCorpus::parse(&lines.join("\n"))
}

pub fn copy_corpus(sentences: &[Vec<String>]) -> ParallelCorpus {
    corpus_of(&sentences.iter().map(|s| (s.clone(), s.clone())).collect::<Vec<_>>())
}

pub fn reversal_corpus(sentences: &[Vec<String>]) -> ParallelCorpus {
    corpus_of(
        &sentences
            .iter()
            .map(|s| (s.clone(), s.iter().rev().cloned().collect()))
            .collect::<Vec<_>>(),
    )
}

// Brute-force n-gram counting: nested scans, no hashing.

fn ngrams<T>(tokens: &[T], n: usize) -> Vec<&[T]> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| &tokens[i..i + n]).collect()
}

fn occurrences<T: PartialEq>(haystack: &[&[T]], needle: &[T]) -> usize {
    haystack.iter().filter(|g| **g == needle).count()
}

/// Clipped matches and candidate total for order `n`.
pub fn brute_counts<T: PartialEq>(cand: &[T], refs: &[Vec<T>], n: usize) -> (usize, usize) {
    let grams = ngrams(cand, n);
    let mut seen: Vec<&[T]> = Vec::new();
    let mut matches = 0;
    for g in &grams {
        if seen.contains(g) {
            continue;
        }
        seen.push(g);
        let in_cand = occurrences(&grams, g);
        let best_ref = refs.iter().map(|r| occurrences(&ngrams(r, n), g)).max().unwrap_or(0);
        matches += in_cand.min(best_ref);
    }
    (matches, grams.len())
}

pub struct BruteBleu {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub c: usize,
    pub r: usize,
    pub score: f64,
}

/// Pooled corpus BLEU-4 without smoothing over the orders that have
/// candidate n-grams.
pub fn brute_corpus_bleu<T: PartialEq>(cands: &[Vec<T>], refs: &[Vec<Vec<T>>]) -> BruteBleu {
    let mut matches = vec![0; 4];
    let mut totals = vec![0; 4];
    let (mut c, mut r) = (0, 0);
    for (cand, rs) in cands.iter().zip(refs) {
        for n in 1..=4 {
            let (m, t) = brute_counts(cand, rs, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
        c += cand.len();
        let mut best = rs[0].len();
        for x in rs {
            let (d, bd) = (x.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
    }
    let score = if c == 0 || matches[0] == 0 {
        0.0
    } else {
        let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
        let used: Vec<f64> = (0..4)
            .filter(|&i| totals[i] > 0)
            .map(|i| matches[i] as f64 / totals[i] as f64)
            .collect();
        if used.contains(&0.0) {
            0.0
        } else {
            let log_sum: f64 = used.iter().fold(0.0, |acc, p| acc + p.ln());
            (bp * (log_sum / used.len() as f64).exp()).min(1.0)
        }
    };
    BruteBleu { matches, totals, c, r, score }
}

/// Pooled chrF (orders 1 to 6, beta 2, whitespace ignored).
pub fn brute_chrf(cands: &[String], refs: &[String]) -> f64 {
    let mut pooled = [(0usize, 0usize, 0usize); 6];
    for (c, r) in cands.iter().zip(refs) {
        let c: Vec<char> = c.chars().filter(|x| !x.is_whitespace()).collect();
        let r: Vec<char> = r.chars().filter(|x| !x.is_whitespace()).collect();
        for n in 1..=6 {
            let (m, tc) = brute_counts(&c, std::slice::from_ref(&r), n);
            let acc = &mut pooled[n - 1];
            acc.0 += m;
            acc.1 += tc;
            acc.2 += ngrams(&r, n).len();
        }
    }
    let (mut p, mut rec, mut k) = (0.0, 0.0, 0);
    for &(m, tc, tr) in &pooled {
        if tc > 0 && tr > 0 {
            p += m as f64 / tc as f64;
            rec += m as f64 / tr as f64;
            k += 1;
        }
    }
    if k == 0 {
        return 0.0;
    }
    p /= k as f64;
    rec /= k as f64;
    if p + rec == 0.0 {
        0.0
    } else {
        5.0 * p * rec / (4.0 * p + rec)
    }
}

/// Every emittable continuation of length at most `max_len` scored by
/// summed log-probability, with `<eos>` closing early sequences and
/// truncation at `max_len`. Returns the best `(tokens, log_prob)`.
pub fn exhaustive_best(model: &Seq2Seq, source: &[usize], max_len: usize) -> (Vec<usize>, f64) {
    let encoded = model.encode(&[source.to_vec()]).unwrap();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut stack = vec![(Vec::<usize>::new(), SOS, encoded.final_state.clone(), 0.0)];
    while let Some((prefix, prev, state, lp)) = stack.pop() {
        let out = model.decode_step(&[prev], &state, &encoded).unwrap();
        let row = log_softmax(out.logits.row(0));
        for (id, &l) in row.iter().enumerate() {
            if id == PAD || id == SOS {
                continue;
            }
            let score = lp + l;
            let mut tokens = prefix.clone();
            let done = if id == EOS {
                true
            } else {
                tokens.push(id);
                tokens.len() == max_len
            };
            if done {
                if best.as_ref().is_none_or(|(_, b)| score > *b) {
                    best = Some((tokens, score));
                }
            } else {
                stack.push((tokens, id, out.state.clone(), score));
            }
        }
    }
    best.unwrap()
}

/// Data seed shared by the synthetic learning tasks.
pub const TASK_DATA_SEED: u64 = 7;

/// Copy task: vocab 20, 500 pairs, lengths 1 to 8.
pub fn copy_task() -> ParallelCorpus {
    copy_corpus(&random_sentences(&mut rng(TASK_DATA_SEED), 20, 8, 500))
}

/// Reversal task: vocab 50, lengths 1 to 10; 2,000 training pairs and
/// `held_out` pairs drawn after them from the same stream.
pub fn reversal_task(held_out: usize) -> (ParallelCorpus, ParallelCorpus) {
    let s = random_sentences(&mut rng(TASK_DATA_SEED), 50, 10, 2000 + held_out);
    (reversal_corpus(&s[..2000]), reversal_corpus(&s[2000..]))
}

pub fn small_task_config(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        epochs,
        batch_size: 16,
        learning_rate: 0.01,
        dropout_rate: 0.0,
        embed_dim: 32,
        hidden_dim: 64,
        att_dim: 64,
        max_len: 12,
        grad_clip: Some(1.0),
        strict: true,
        ..TrainingConfig::default()
    }
}

pub fn exact_matches(state: &TrainingState, corpus: &ParallelCorpus) -> usize {
    let sources: Vec<Vec<String>> = corpus.pairs.iter().map(|p| p.source.clone()).collect();
    let out = state.translator().translate_all(&sources, Strategy::Greedy, 1).unwrap();
    out.iter().zip(&corpus.pairs).filter(|(o, p)| o.tokens == p.target).count()
}

pub fn held_out_bleu(state: &TrainingState, corpus: &ParallelCorpus) -> f64 {
    state.bleu_on(corpus).unwrap()
}

/// 5-epoch moving averages of the loss curve.
pub fn moving_average(losses: &[f64], window: usize) -> Vec<f64> {
    losses.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

/// Copy-task settings. General scoring learns a monotone alignment here;
/// with dot scoring the first query is the encoder's final state, which
/// matches the `<eos>` position best.
pub fn copy_task_config(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        attention_kind: Some(ScoreKind::General),
        ..small_task_config(epochs)
    }
}
