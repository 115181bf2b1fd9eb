mod common;

use common::{normal, rng};
use proptest::prelude::*;
use seqforge::attention::{attend, context, Attention, ScoreKind};
use seqforge::autograd::{ParamSet, Tape};
use seqforge::model::{Architecture, Seq2Seq};
use seqforge::optim::{AdamConfig, AdamState};
use seqforge::rnn::CellKind;
use seqforge::tensor::{log_softmax, sparse_cross_entropy};
use seqforge::text::{tokenize, ParallelCorpus, Side, Vocabulary, EOS, PAD, SOS};
use seqforge::Tensor;

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, len)
}

fn mask_strategy(batch: usize, steps: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(1..=steps, batch)
        .prop_map(move |lens| lens.iter().flat_map(|&l| (0..steps).map(move |t| t < l)).collect())
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(v in finite_vec(1..20), shift in -100.0f64..100.0) {
        let p = Tensor::vector(v.clone()).softmax().unwrap();
        prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(p.data().iter().all(|&x| x >= 0.0));
        let q = Tensor::vector(v.iter().map(|x| x + shift).collect()).softmax().unwrap();
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative(v in finite_vec(2..20), t in any::<prop::sample::Index>()) {
        let target = t.index(v.len());
        let l = sparse_cross_entropy(&Tensor::vector(v.clone()), target, false).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l + log_softmax(&v)[target]).abs() <= 1e-12);
    }

    #[test]
    fn adam_without_gradients_leaves_parameters_alone(v in finite_vec(1..10), steps in 1usize..40) {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::vector(v.clone()).with_grad());
        let mut adam = AdamState::new(&ps, AdamConfig::default()).unwrap();
        for _ in 0..steps {
            adam.step(&mut ps).unwrap();
        }
        prop_assert_eq!(ps.iter().next().unwrap().1.data(), &v[..]);
    }

    #[test]
    fn attention_weights_are_masked_distributions(
        seed in any::<u64>(),
        kind in prop::sample::select(ScoreKind::ALL.to_vec()),
        valid in mask_strategy(3, 6),
    ) {
        let mut r = rng(seed);
        let mut ps = ParamSet::new();
        let att = Attention::new(&mut ps, "a", kind, 4, 5, &mut r);
        let enc = normal(&mut r, &[3, 6, 4]);
        let h = normal(&mut r, &[3, 4]);
        let mut tape = Tape::with_params(&ps);
        let e = tape.constant(enc);
        let q = tape.constant(h);
        let bound = att.bind(&mut tape, e).unwrap();
        let (w, c) = bound.step(&mut tape, q, &valid).unwrap();
        let w = tape.value(w);
        for b in 0..3 {
            let row = w.row(b);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for (x, ok) in row.iter().zip(&valid[b * 6..(b + 1) * 6]) {
                prop_assert!(*x >= 0.0);
                if !ok {
                    prop_assert_eq!(*x, 0.0);
                }
            }
        }
        prop_assert!(tape.value(c).is_finite());
    }

    #[test]
    fn scoring_reductions_hold_exactly(seed in any::<u64>()) {
        let mut r = rng(seed);
        let hidden = 4;
        let enc = normal(&mut r, &[2, 5, hidden]);
        let h = normal(&mut r, &[2, hidden]);
        let mut ps = ParamSet::new();
        let dot = Attention::new(&mut ps, "d", ScoreKind::Dot, hidden, hidden, &mut r);
        let scaled = Attention::new(&mut ps, "s", ScoreKind::ScaledDot, hidden, hidden, &mut r);
        let general = Attention::new(&mut ps, "g", ScoreKind::General, hidden, hidden, &mut r);
        let wid = general.w_general.unwrap();
        ps.get_mut(wid).data_mut().copy_from_slice(Tensor::identity(hidden).data());
        let mut tape = Tape::with_params(&ps);
        let e = tape.constant(enc);
        let q = tape.constant(h);
        let mut energies = Vec::new();
        for a in [&dot, &scaled, &general] {
            let b = a.bind(&mut tape, e).unwrap();
            let s = b.score(&mut tape, q).unwrap();
            energies.push(tape.value(s).data().to_vec());
        }
        prop_assert_eq!(&energies[2], &energies[0]);
        let halved: Vec<f64> = energies[0].iter().map(|x| x * (1.0 / 2.0)).collect();
        prop_assert_eq!(&energies[1], &halved);
    }

    #[test]
    fn context_is_permutation_equivariant(seed in any::<u64>(), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut r = rng(seed);
        let enc = normal(&mut r, &[1, 5, 3]);
        let energies = normal(&mut r, &[1, 5]);
        let valid = vec![true; 5];
        let mut tape = Tape::new();
        let e = tape.constant(enc.clone());
        let en = tape.constant(energies.clone());
        let w = attend(&mut tape, en, &valid).unwrap();
        let c = context(&mut tape, w, e).unwrap();
        let wv = tape.value(w).data().to_vec();
        let permuted_w: Vec<f64> = perm.iter().map(|&j| wv[j]).collect();
        let permuted_enc: Vec<f64> = perm.iter().flat_map(|&j| enc.data()[j * 3..(j + 1) * 3].to_vec()).collect();
        let pw = tape.constant(Tensor::new(vec![1, 5], permuted_w).unwrap());
        let pe = tape.constant(Tensor::new(vec![1, 5, 3], permuted_enc).unwrap());
        let pc = context(&mut tape, pw, pe).unwrap();
        for (a, b) in tape.value(c).data().iter().zip(tape.value(pc).data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn tokenize_is_idempotent(s in "\\PC{0,40}") {
        let once = tokenize(&s);
        prop_assert_eq!(tokenize(&once.join(" ")), once);
    }

    #[test]
    fn encode_decode_round_trips(words in prop::collection::vec("[a-z]{1,4}", 0..8), extra in 0usize..5) {
        let vocab = Vocabulary::from_tokens(&words);
        let max_len = (words.len() + 2 + extra).max(3);
        let ids = vocab.encode(&words, max_len);
        prop_assert_eq!(ids.len(), max_len);
        prop_assert_eq!(vocab.decode(&ids), words);
    }

    #[test]
    fn vocabulary_dump_is_deterministic(lines in prop::collection::vec(("[a-e ]{1,12}", "[f-j ]{1,12}"), 1..10)) {
        let text: Vec<String> = lines.iter().map(|(s, t)| format!("{s}\t{t}")).collect();
        let build = || {
            let c = ParallelCorpus::parse(&text.join("\n"));
            Vocabulary::build(&c, Side::Source, 1).map(|v| v.dump())
        };
        match (build(), build()) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "non-deterministic build"),
        }
    }

    #[test]
    fn model_outputs_are_finite_and_padding_is_inert(
        seed in any::<u64>(),
        cell in prop::sample::select(vec![CellKind::Lstm, CellKind::Gru]),
        kind in prop::option::of(prop::sample::select(ScoreKind::ALL.to_vec())),
        len in 0usize..6,
        pad in 1usize..4,
    ) {
        let arch = Architecture {
            cell,
            attention: kind,
            embed_dim: 3,
            hidden_dim: 4,
            att_dim: 3,
            source_vocab: 9,
            target_vocab: 8,
            project_context: true,
            forget_bias: 1.0,
        };
        let model = Seq2Seq::new(arch, seed).unwrap();
        let mut src = vec![SOS];
        src.extend((0..len).map(|i| 4 + (seed as usize + i) % 5));
        src.push(EOS);
        let mut padded = src.clone();
        padded.extend(std::iter::repeat_n(PAD, pad));
        let a = model.encode(&[src.clone()]).unwrap();
        let b = model.encode(&[padded]).unwrap();
        prop_assert_eq!(a.final_state.h.data(), b.final_state.h.data());
        let tgt = vec![SOS, 5, 6, EOS];
        let loss = model.teacher_forced_loss(&src, &tgt).unwrap();
        prop_assert!(loss.is_finite() && loss > 0.0);
        let step = model.decode_step(&[SOS], &a.final_state, &a).unwrap();
        prop_assert!(step.logits.is_finite());
    }
}
