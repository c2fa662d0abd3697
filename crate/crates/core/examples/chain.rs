use std::time::Instant;

use pnma_core::analysis::{evaluate, rank_distribution, scenario};
use pnma_core::dataio::SchemeKind;
use pnma_core::memory::{build_memory, UniformSampler};
use pnma_core::synthetic::{gen_synthetic, SyntheticConfig};
use pnma_core::training::{predict_corpus, train_base, train_pnma, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let mut cfg = TrainConfig::default();
    for kv in &args[2.min(args.len())..] {
        let (k, v) = kv.split_once('=').unwrap();
        assert!(cfg.set(k, v).unwrap(), "{k}");
    }
    cfg.seed = seed;
    let t0 = Instant::now();
    let corpus = gen_synthetic(&SyntheticConfig {
        seed,
        ..Default::default()
    })
    .unwrap();
    let base = train_base::<f32>(&corpus.train, &corpus.valid, &cfg, SchemeKind::BioSpan, &mut |l| {
        eprintln!("base {l}")
    })
    .unwrap();
    let t1 = t0.elapsed().as_secs_f64();
    let mem = build_memory(&base.model, &corpus.train, cfg.memory_fraction, seed, &UniformSampler).unwrap();
    let p = train_pnma(&base.model, &mem, &corpus.train, &corpus.valid, &cfg, &mut |l| {
        eprintln!("pnma {l}")
    })
    .unwrap();
    let t2 = t0.elapsed().as_secs_f64();
    let bp = predict_corpus(&base.model, None, &corpus.test).unwrap();
    let pp = predict_corpus(&p.model, Some(&mem), &corpus.test).unwrap();
    let fb = evaluate(SchemeKind::BioSpan, &corpus.test, &bp).unwrap().f1;
    let fp = evaluate(SchemeKind::BioSpan, &corpus.test, &pp).unwrap().f1;
    let mut sc = [0usize; 4];
    for ((inst, b), q) in corpus.test.iter().zip(&bp).zip(&pp) {
        for t in 0..inst.len() {
            sc[scenario(&inst.gold_tags[t], &b[t], &q[t])] += 1;
        }
    }
    let rd = rank_distribution(&base.model, &mem, &corpus.valid, cfg.k, false).unwrap();
    println!(
        "seed {seed} base_f1 {fb:.4} pnma_f1 {fp:.4} scen {sc:?} median {:?} incorrect {} base_best {} pnma_best {} t_base {t1:.1} t_all {t2:.1} retr/tok {:.2e}",
        rd.base_incorrect.median(),
        rd.base_incorrect.total(),
        base.best_epoch,
        p.best_epoch,
        p.retrieval_secs_per_token()
    );
}
