use eventvec::corpus::{Corpus, Event, Record, Vocabulary};
use eventvec::embedding::{EmbeddingModel, Mode, Objective};
use eventvec::synthgen::{generate, SynthSpec};
use eventvec::trainer::{
    self, continue_training, read_model, train_with_progress, write_model, EpochStats, Schedule, TrainConfig,
};
use eventvec::Error;

fn small() -> (Corpus, Vocabulary) {
    let cohort = generate(&SynthSpec::strong(), 150, 2000, 21).unwrap();
    let corpus = cohort.corpus(21);
    let vocab = Vocabulary::build(&corpus.records, 5, 1).unwrap();
    (corpus, vocab)
}

fn config() -> TrainConfig {
    TrainConfig { k: 12, epochs: 3, min_count: 5, ..TrainConfig::default() }
}

fn bytes(m: &EmbeddingModel) -> Vec<u8> {
    let mut b = Vec::new();
    write_model(m, &mut b).unwrap();
    b
}

#[test]
fn single_worker_training_is_reproducible() {
    let (corpus, vocab) = small();
    for (mode, objective) in [(Mode::Dbow, Objective::Hs), (Mode::Dm, Objective::Ns)] {
        let cfg = TrainConfig { mode, objective, ..config() };
        let a = trainer::train(&corpus, &vocab, &cfg).unwrap();
        let b = trainer::train(&corpus, &vocab, &cfg).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let c = trainer::train(&corpus, &vocab, &TrainConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.doc_vectors, c.doc_vectors);
    }
}

#[test]
fn loss_decreases_for_every_architecture() {
    let (corpus, vocab) = small();
    for mode in [Mode::Dbow, Mode::Dm] {
        for objective in [Objective::Hs, Objective::Ns] {
            for train_words in [false, true] {
                let cfg = TrainConfig { mode, objective, train_words, epochs: 5, ..config() };
                let mut stats: Vec<EpochStats> = Vec::new();
                let m = train_with_progress(&corpus, &vocab, &cfg, |s| stats.push(s.clone())).unwrap();
                assert!(m.all_finite());
                assert_eq!(stats.len(), 5);
                assert_eq!(stats.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
                assert!(stats.windows(2).all(|w| w[1].alpha < w[0].alpha));
                if train_words {
                    // the shared output layer fits each record online, so the
                    // mixed skip-gram loss need not fall as alpha decays
                    assert!(stats.iter().all(|s| s.mean_loss.is_finite()));
                    continue;
                }
                assert!(
                    stats[4].mean_loss < stats[0].mean_loss,
                    "{mode:?}/{objective:?}/{train_words}: {stats:?}"
                );
                // nonincreasing up to a 1% noise band
                assert!(stats.windows(2).all(|w| w[1].mean_loss <= w[0].mean_loss * 1.01), "{stats:?}");
            }
        }
    }
}

#[test]
fn parallel_training_stays_finite() {
    let (corpus, vocab) = small();
    let m = trainer::train(&corpus, &vocab, &TrainConfig { workers: 4, ..config() }).unwrap();
    assert!(m.all_finite());
    assert_eq!(m.meta.epochs, 3);
}

#[test]
fn container_round_trip() {
    let (corpus, vocab) = small();
    for objective in [Objective::Hs, Objective::Ns] {
        let mut m = trainer::train(&corpus, &vocab, &TrainConfig { objective, ..config() }).unwrap();
        m.meta.fingerprint = "abc123".into();
        let b = bytes(&m);
        assert_eq!(&b[..4], b"SQV1");
        let back = read_model(&b).unwrap();
        assert_eq!(back, m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        trainer::save(&m, &path).unwrap();
        assert_eq!(trainer::load(&path).unwrap(), m);
    }
}

#[test]
fn corrupt_containers_are_rejected() {
    let (corpus, vocab) = small();
    let m = trainer::train(&corpus, &vocab, &config()).unwrap();
    let good = bytes(&m);
    let container_err = |b: &[u8]| matches!(read_model(b), Err(Error::Container { .. }));

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(container_err(&bad));
    let mut bad = good.clone();
    bad[4] = 9;
    assert!(container_err(&bad));
    let mut bad = good.clone();
    bad[6] = 7;
    assert!(container_err(&bad));
    let mut bad = good.clone();
    bad[7] = 7;
    assert!(container_err(&bad));
    for cut in [0, 3, 10, 30, good.len() / 2, good.len() - 1] {
        assert!(container_err(&good[..cut]), "cut at {cut}");
    }
    let mut long = good.clone();
    long.push(0);
    assert!(container_err(&long));
    assert!(matches!(
        trainer::load(std::path::Path::new("/nonexistent/model.bin")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn continuation() {
    let (corpus, vocab) = small();
    let m = trainer::train(&corpus, &vocab, &config()).unwrap();
    let same = continue_training(m.clone(), &corpus, &vocab, 0, 1, |_| {}).unwrap();
    assert_eq!(bytes(&same), bytes(&m));

    let mut epochs = Vec::new();
    let more = continue_training(m.clone(), &corpus, &vocab, 2, 1, |s| epochs.push(s.epoch)).unwrap();
    assert_eq!(epochs, vec![4, 5]);
    assert_eq!(more.meta.epochs, 5);
    assert_ne!(more.doc_vectors, m.doc_vectors);

    let other_vocab = Vocabulary::build(&corpus.records, 50, 1).unwrap();
    assert!(matches!(
        continue_training(m.clone(), &corpus, &other_vocab, 1, 1, |_| {}),
        Err(Error::VocabMismatch { .. })
    ));
    let fewer = Corpus { records: corpus.records[1..].to_vec(), ..corpus.clone() };
    assert!(matches!(
        continue_training(m.clone(), &fewer, &vocab, 1, 1, |_| {}),
        Err(Error::Data(_))
    ));
    assert!(continue_training(m, &corpus, &vocab, 1, 0, |_| {}).is_err());
}

#[test]
fn invalid_configs() {
    let (corpus, vocab) = small();
    for cfg in [
        TrainConfig { epochs: 0, ..config() },
        TrainConfig { k: 0, ..config() },
        TrainConfig { window: 0, ..config() },
        TrainConfig { workers: 0, ..config() },
        TrainConfig { final_alpha: 0.0, ..config() },
        TrainConfig { final_alpha: 0.5, ..config() },
        TrainConfig { objective: Objective::Ns, num_negatives: 0, ..config() },
    ] {
        assert!(matches!(trainer::train(&corpus, &vocab, &cfg), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn huge_learning_rate_is_reported() {
    let (corpus, vocab) = small();
    let cfg = TrainConfig { initial_alpha: 1e30, final_alpha: 1e29, ..config() };
    match trainer::train(&corpus, &vocab, &cfg) {
        Err(Error::Numeric(_)) => {}
        Ok(m) => assert!(m.all_finite()),
        Err(e) => panic!("unexpected {e}"),
    }
}

#[test]
fn two_token_document_is_reproducible() {
    let doc = Record::from_events("d", vec![Event::new(0, "dx:a").unwrap(), Event::new(1, "dx:b").unwrap()], 1);
    let corpus = Corpus::from_records(vec![doc], 1);
    let vocab = Vocabulary::build(&corpus.records, 1, 1).unwrap();
    for objective in [Objective::Hs, Objective::Ns] {
        let cfg = TrainConfig { k: 2, epochs: 1, min_count: 1, objective, ..TrainConfig::default() };
        let a = trainer::train(&corpus, &vocab, &cfg).unwrap();
        let b = trainer::train(&corpus, &vocab, &cfg).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
    }
}

#[test]
fn empty_corpus_is_a_config_error() {
    let doc = Record::from_events("d", vec![Event::new(0, "dx:a").unwrap()], 1);
    let corpus = Corpus::from_records(vec![doc], 1);
    let vocab = Vocabulary::build(&corpus.records, 5, 1).unwrap();
    assert!(matches!(trainer::train(&corpus, &vocab, &config()), Err(Error::Config(_))));
}

#[test]
fn header_counts_and_resave() {
    let (corpus, vocab) = small();
    let m = trainer::train(&corpus, &vocab, &config()).unwrap();
    let b = bytes(&m);
    let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as usize;
    assert_eq!(u32_at(8), 12, "k");
    assert_eq!(u32_at(12), vocab.len());
    assert_eq!(u32_at(16), corpus.len());
    assert_eq!(u32_at(24), 3, "epochs");
    assert_eq!(bytes(&read_model(&b).unwrap()), b);
    let mut bad = b.clone();
    bad[1] ^= 0xff;
    assert!(matches!(read_model(&bad), Err(Error::Container { offset: 0, .. })));
}

#[test]
fn refinement_bookkeeping() {
    let cohort = generate(&SynthSpec::strong(), 20, 2000, 22).unwrap();
    let corpus = cohort.corpus(22);
    let vocab = Vocabulary::build(&corpus.records, 5, 1).unwrap();
    let cfg = TrainConfig { k: 4, epochs: trainer::DEFAULT_EPOCHS, min_count: 5, ..TrainConfig::default() };
    let m = trainer::train(&corpus, &vocab, &cfg).unwrap();
    assert_eq!(m.meta.epochs, 20);
    let mut last_alpha = 0.0;
    let m = continue_training(m, &corpus, &vocab, trainer::REFINEMENT_EPOCHS, 1, |s| last_alpha = s.alpha).unwrap();
    assert_eq!(m.meta.epochs, 80);
    assert!((last_alpha - cfg.final_alpha).abs() < 1e-9, "schedule ends at final_alpha");
}

#[test]
fn schedule_is_linear() {
    let s = Schedule { initial_alpha: 0.025, final_alpha: 1e-4, total: 1000 };
    assert_eq!(s.alpha(0), 0.025);
    assert_eq!(s.alpha(1000), 1e-4);
    for t in [1u64, 250, 999] {
        let exact = 0.025f64 + (1e-4f64 - 0.025) * t as f64 / 1000.0;
        assert!((s.alpha(t) as f64 - exact).abs() < 1e-8);
    }
}
