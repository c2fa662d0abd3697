use pnma_core::analysis::rank_distribution;
use pnma_core::checkpoint;
use pnma_core::dataio::SchemeKind;
use pnma_core::memory::{build_memory, knn_query, UniformSampler};
use pnma_core::synthetic::{gen_synthetic, SyntheticConfig, SyntheticCorpus};
use pnma_core::training::{train_base, train_pnma, TrainConfig, TrainOutcome};
use pnma_core::Error;

fn small_corpus() -> SyntheticCorpus {
    gen_synthetic(&SyntheticConfig {
        train: 50,
        valid: 20,
        test: 20,
        seed: 3,
        exception_rate: 0.1,
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        lr_schedule: vec![4],
        word_dim: 8,
        predicate_dim: 4,
        hidden: 8,
        layers: 2,
        batch_size: 10,
        k: 4,
        phase2_epochs: 3,
        ..TrainConfig::default()
    }
}

fn base(corpus: &SyntheticCorpus, cfg: &TrainConfig) -> TrainOutcome<f32> {
    train_base(&corpus.train, &corpus.valid, cfg, SchemeKind::BioSpan, &mut |_| {}).unwrap()
}

#[test]
fn loss_falls_and_runs_repeat_bit_for_bit() {
    let corpus = small_corpus();
    let cfg = small_config();
    let a = base(&corpus, &cfg);
    assert_eq!(a.log.len(), 5);
    assert!(a.log[4].train_loss < a.log[0].train_loss, "{:?}", a.log);
    assert!(a.log.iter().all(|l| l.valid.is_some()));
    let b = base(&corpus, &cfg);
    assert_eq!(checkpoint::to_bytes(&a.model), checkpoint::to_bytes(&b.model));

    let other = base(&corpus, &TrainConfig { seed: 2, ..cfg });
    assert_ne!(checkpoint::to_bytes(&a.model), checkpoint::to_bytes(&other.model));
}

#[test]
fn thread_count_does_not_change_the_result() {
    let corpus = small_corpus();
    let cfg = TrainConfig {
        epochs: 2,
        ..small_config()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| checkpoint::to_bytes(&base(&corpus, &cfg).model))
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn phase_two_leaves_the_encoder_untouched() {
    let corpus = small_corpus();
    let cfg = small_config();
    let b = base(&corpus, &cfg);
    let mem = build_memory(&b.model, &corpus.train, 0.5, 1, &UniformSampler).unwrap();
    let p = train_pnma(&b.model, &mem, &corpus.train, &corpus.valid, &cfg, &mut |_| {}).unwrap();
    assert_eq!(p.log.len(), 3);
    assert_eq!(p.model.encoder, b.model.encoder);
    assert_ne!(p.model.crf, b.model.crf);
    assert!(p.model.neighborhood.is_some());
    assert_eq!(p.model.encoder_digest(), b.model.digest());
    p.model.check_memory(&mem).unwrap();

    // a second phase 2 on top of a phase-2 model is refused
    let again = train_pnma(&p.model, &mem, &corpus.train, &corpus.valid, &cfg, &mut |_| {});
    assert!(matches!(again, Err(Error::Compatibility(_))));
}

#[test]
fn memory_from_another_checkpoint_is_refused() {
    let corpus = small_corpus();
    let cfg = TrainConfig {
        epochs: 1,
        ..small_config()
    };
    let a = base(&corpus, &cfg);
    let b = base(&corpus, &TrainConfig { seed: 9, ..cfg.clone() });
    let mem = build_memory(&b.model, &corpus.train, 0.5, 1, &UniformSampler).unwrap();
    let r = train_pnma(&a.model, &mem, &corpus.train, &corpus.valid, &cfg, &mut |_| {});
    assert!(matches!(r, Err(Error::Compatibility(_))));
}

#[test]
fn a_full_memory_finds_every_training_token_at_distance_zero() {
    let corpus = small_corpus();
    let cfg = TrainConfig {
        epochs: 1,
        ..small_config()
    };
    let b = base(&corpus, &cfg);
    let mem = build_memory(&b.model, &corpus.train, 1.0, 1, &UniformSampler).unwrap();
    let tokens: usize = corpus.train.iter().map(|i| i.len()).sum();
    assert_eq!(mem.len(), tokens);
    for inst in corpus.train.iter().take(10) {
        let h = b.model.encode(inst).unwrap();
        for t in 0..inst.len() {
            let ns = knn_query(h.row(t), &mem, 1, &[]).unwrap();
            let first = &ns.items[0];
            assert_eq!(first.distance, 0.0);
            // identical activations can occur for repeated contexts, so only
            // the label is certain to agree
            assert_eq!(mem.label(first.entry_id), b.model.tags.id(&inst.gold_tags[t]).unwrap());
        }
    }
    let dist = rank_distribution(&b.model, &mem, &corpus.train, 4, false).unwrap();
    for h in [&dist.base_correct, &dist.base_incorrect] {
        if h.total() > 0 {
            assert_eq!(h.median(), Some(1));
            assert_eq!(h.absent(), 0);
        }
    }
}
