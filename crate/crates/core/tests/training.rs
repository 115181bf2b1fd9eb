mod common;

use common::{copy_task, copy_task_config, exact_matches, moving_average, random_sentences, rng};
use seqforge::decode::Strategy;
use seqforge::text::ParallelCorpus;
use seqforge::train::{TrainingConfig, TrainingState, CHECKPOINT_VERSION};
use seqforge::Error;

fn tiny_corpus(n: usize, seed: u64) -> ParallelCorpus {
    common::reversal_corpus(&random_sentences(&mut rng(seed), 8, 5, n))
}

fn tiny_config(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        epochs,
        batch_size: 4,
        learning_rate: 0.01,
        dropout_rate: 0.3,
        embed_dim: 6,
        hidden_dim: 8,
        att_dim: 5,
        max_len: 8,
        strict: true,
        attention_kind: Some(seqforge::attention::ScoreKind::Concat),
        ..TrainingConfig::default()
    }
}

fn param_bits(s: &TrainingState) -> Vec<u64> {
    s.model.params.iter().flat_map(|(_, t)| t.data().iter().map(|x| x.to_bits())).collect()
}

#[test]
fn single_pair_is_memorized_in_200_steps() {
    let corpus = ParallelCorpus::parse("the cat sat on the mat\tnwamba no n ute");
    let config = TrainingConfig {
        epochs: 200,
        batch_size: 1,
        dropout_rate: 0.0,
        embed_dim: 16,
        hidden_dim: 32,
        att_dim: 32,
        max_len: 12,
        strict: true,
        eval_every: 0,
        ..TrainingConfig::default()
    };
    let mut state = TrainingState::new(&corpus, config).unwrap();
    state.train(&corpus, None, |_| Ok(())).unwrap();
    let loss = state.history.last_loss().unwrap();
    assert!(loss < 0.05, "loss after 200 steps: {loss}");
    assert_eq!(exact_matches(&state, &corpus), 1);
}

#[test]
fn zero_epochs_is_rejected() {
    let corpus = tiny_corpus(5, 1);
    let err = TrainingState::new(&corpus, tiny_config(0)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn strict_runs_are_reproducible() {
    let corpus = tiny_corpus(30, 2);
    let run = || {
        let mut s = TrainingState::new(&corpus, tiny_config(3)).unwrap();
        s.train(&corpus, Some(&corpus), |_| Ok(())).unwrap();
        s
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history.losses(), b.history.losses());
    let bleu = |s: &TrainingState| s.history.epochs.iter().map(|e| e.bleu).collect::<Vec<_>>();
    assert_eq!(bleu(&a), bleu(&b));
    assert_eq!(param_bits(&a), param_bits(&b));
}

#[test]
fn different_seeds_give_different_runs() {
    let corpus = tiny_corpus(30, 2);
    let mut a = TrainingState::new(&corpus, tiny_config(1)).unwrap();
    let mut b = TrainingState::new(&corpus, TrainingConfig { seed: 43, ..tiny_config(1) }).unwrap();
    a.train(&corpus, None, |_| Ok(())).unwrap();
    b.train(&corpus, None, |_| Ok(())).unwrap();
    assert_ne!(a.history.losses(), b.history.losses());
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let corpus = tiny_corpus(20, 3);
    let mut s = TrainingState::new(&corpus, tiny_config(2)).unwrap();
    s.train(&corpus, Some(&corpus), |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    s.save(&p1).unwrap();
    let loaded = TrainingState::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(param_bits(&s), param_bits(&loaded));
    assert_eq!(s.optimizer, loaded.optimizer);
    assert_eq!(s.history, loaded.history);
    assert_eq!(s.source_vocab.dump(), loaded.source_vocab.dump());
    assert_eq!(s.target_vocab.dump(), loaded.target_vocab.dump());
    assert_eq!(s.config, loaded.config);
    // no temporary file is left behind
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn every_truncation_is_an_integrity_error() {
    let corpus = tiny_corpus(10, 4);
    let s = TrainingState::new(&corpus, tiny_config(1)).unwrap();
    let bytes = s.to_bytes();
    for len in 0..bytes.len() {
        match TrainingState::from_bytes(&bytes[..len]) {
            Err(Error::Integrity(_)) => {}
            other => panic!("length {len}: {:?}", other.map(|_| ())),
        }
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(TrainingState::from_bytes(&trailing), Err(Error::Integrity(_))));
}

#[test]
fn corrupted_headers_are_rejected() {
    let corpus = tiny_corpus(10, 5);
    let s = TrainingState::new(&corpus, tiny_config(1)).unwrap();
    let bytes = s.to_bytes();

    let mut wrong_version = bytes.clone();
    wrong_version[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    match TrainingState::from_bytes(&wrong_version) {
        Err(Error::Incompatible { found, expected }) => {
            assert_eq!((found, expected), (CHECKPOINT_VERSION + 1, CHECKPOINT_VERSION));
        }
        other => panic!("{:?}", other.map(|_| ())),
    }

    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(matches!(TrainingState::from_bytes(&bad_magic), Err(Error::Integrity(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.ckpt");
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(TrainingState::load(&path), Err(Error::Integrity(_))));
}

fn resume_matches_uninterrupted(config: TrainingConfig) {
    let corpus = tiny_corpus(24, 6);
    let valid = tiny_corpus(6, 60);
    let total = config.epochs;

    let mut straight = TrainingState::new(&corpus, config.clone()).unwrap();
    straight.train(&corpus, Some(&valid), |_| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut first = TrainingState::new(&corpus, TrainingConfig { epochs: 2, ..config }).unwrap();
    first.train(&corpus, Some(&valid), |s| s.save(&path)).unwrap();
    drop(first);
    let mut resumed = TrainingState::load(&path).unwrap();
    assert_eq!(resumed.epochs_done(), 2);
    resumed.config.epochs = total;
    resumed.train(&corpus, Some(&valid), |_| Ok(())).unwrap();

    assert_eq!(straight.history.losses(), resumed.history.losses());
    let bleu = |s: &TrainingState| s.history.epochs.iter().map(|e| e.bleu).collect::<Vec<_>>();
    assert_eq!(bleu(&straight), bleu(&resumed));
    assert_eq!(param_bits(&straight), param_bits(&resumed));
    assert_eq!(straight.optimizer, resumed.optimizer);
}

#[test]
fn resumed_strict_training_matches_uninterrupted() {
    resume_matches_uninterrupted(tiny_config(5));
}

#[test]
fn resumed_bucketed_training_matches_uninterrupted() {
    resume_matches_uninterrupted(TrainingConfig {
        strict: false,
        bucketing: true,
        ..tiny_config(4)
    });
}

#[test]
fn history_csv_round_trips() {
    let corpus = tiny_corpus(12, 7);
    let mut s = TrainingState::new(&corpus, TrainingConfig { eval_every: 2, ..tiny_config(3) }).unwrap();
    s.train(&corpus, Some(&corpus), |_| Ok(())).unwrap();
    let csv = s.history.to_csv();
    let parsed = seqforge::train::TrainingHistory::parse_csv(&csv).unwrap();
    assert_eq!(parsed, s.history);
    assert_eq!(s.history.epochs.iter().map(|e| e.bleu.is_some()).collect::<Vec<_>>(), [false, true, false]);
}

/// Loss values of the reference copy-task run (strict mode, seed 42).
const COPY_GOLDEN: &str = include_str!("fixtures/copy_task_losses.txt");

#[test]
fn copy_task_curve_and_alignment() {
    let corpus = copy_task();
    let mut state = TrainingState::new(&corpus, copy_task_config(30)).unwrap();
    state.train(&corpus, None, |_| Ok(())).unwrap();
    let losses = state.history.losses();

    let golden: Vec<f64> = COPY_GOLDEN.split_whitespace().map(|x| x.parse().unwrap()).collect();
    assert_eq!(golden.len(), losses.len());
    for (i, (g, l)) in golden.iter().zip(&losses).enumerate() {
        assert!((g - l).abs() <= 1e-6 * g.abs().max(1e-3), "epoch {}: {l} vs golden {g}", i + 1);
    }

    let smoothed = moving_average(&losses[10..], 5);
    assert!(
        smoothed.windows(2).all(|w| w[1] <= w[0]),
        "moving average rises: {smoothed:?}"
    );
    assert!(losses.iter().position(|&l| l < 0.1).is_some());

    // attention follows the source left to right
    let t = state.translator();
    let mut monotone = 0;
    for p in &corpus.pairs {
        let tr = t.translate_tokens(&p.source, Strategy::Greedy).unwrap();
        let path = tr.alignment.row_argmax();
        for row in &tr.alignment.weights {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        if path.windows(2).all(|w| w[0] <= w[1]) {
            monotone += 1;
        }
    }
    assert_eq!(monotone, corpus.len());
}
