use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pnma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnma"))
        .args(args)
        .env_remove("PNMA_CONFIG")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
synth_train = 40
synth_valid = 15
synth_test = 15
epochs = 2
lr_schedule = 1
word_dim = 8
predicate_dim = 4
hidden = 8
layers = 2
k = 4
phase2_epochs = 2
";

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// gen-synthetic, train-base, build-memory, train-pnma, evaluate.
fn chain(dir: &Path, threads: &str) {
    let cfg = p(dir, "run.cfg");
    fs::write(&cfg, TINY).unwrap();
    let run = |args: &[&str]| {
        let mut all = vec!["--config", &cfg, "--threads", threads, "--seed", "4"];
        all.extend_from_slice(args);
        let o = pnma(&all);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    let data = p(dir, "data");
    let (train, valid, test) = (
        p(dir, "data/train.txt"),
        p(dir, "data/valid.txt"),
        p(dir, "data/test.txt"),
    );
    let (base, mem, model) = (p(dir, "base.ckpt"), p(dir, "mem.bin"), p(dir, "pnma.ckpt"));
    run(&["gen-synthetic", "--out-dir", &data]);
    run(&["train-base", "--train", &train, "--valid", &valid, "--output", &base]);
    run(&["build-memory", "--model", &base, "--train", &train, "--output", &mem]);
    run(&[
        "train-pnma",
        "--model",
        &base,
        "--memory",
        &mem,
        "--train",
        &train,
        "--valid",
        &valid,
        "--output",
        &model,
    ]);
    run(&[
        "evaluate",
        "--model",
        &model,
        "--memory",
        &mem,
        "--input",
        &test,
        "--output",
        &p(dir, "eval.tsv"),
    ]);
    run(&[
        "predict",
        "--model",
        &model,
        "--memory",
        &mem,
        "--input",
        &test,
        "--output",
        &p(dir, "pred.txt"),
    ]);
    run(&[
        "analyze",
        "disagreement",
        "--base-model",
        &base,
        "--model",
        &model,
        "--memory",
        &mem,
        "--input",
        &test,
        "--train",
        &train,
        "--output",
        &p(dir, "dis.tsv"),
        "--vectors",
        &p(dir, "vectors.tsv"),
    ]);
}

#[test]
fn help_lists_the_subcommands() {
    let o = pnma(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8_lossy(&o.stdout);
    for cmd in [
        "prepare",
        "train-base",
        "build-memory",
        "train-pnma",
        "predict",
        "evaluate",
        "analyze",
        "gen-synthetic",
    ] {
        assert!(out.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(pnma(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pnma(&["train-base", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn unknown_config_key_exits_two_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "bad.cfg");
    fs::write(&cfg, "epochs = 2\nlearning_rat = 0.1\n").unwrap();
    let o = pnma(&["--config", &cfg, "gen-synthetic", "--out-dir", &p(dir.path(), "d")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));

    // the same file picked up through the environment
    let o = Command::new(env!("CARGO_BIN_EXE_pnma"))
        .args(["gen-synthetic", "--out-dir", &p(dir.path(), "d")])
        .env("PNMA_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let o = pnma(&[
        "--set",
        "hidden=wide",
        "gen-synthetic",
        "--out-dir",
        &p(dir.path(), "d"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(dir.path(), "nope.txt");
    let o = pnma(&["train-base", "--train", &missing, "--output", &p(dir.path(), "m.ckpt")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let junk = p(dir.path(), "junk.ckpt");
    fs::write(&junk, b"PNMACKPT1 but not really").unwrap();
    let input = p(dir.path(), "in.txt");
    fs::write(&input, "1\tthe\t-\tO\n2\truns\truns\tB-V\n\n").unwrap();
    let o = pnma(&[
        "predict",
        "--model",
        &junk,
        "--input",
        &input,
        "--output",
        &p(dir.path(), "o.txt"),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn small_chain_writes_reports_and_ignores_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    chain(a.path(), "1");
    chain(b.path(), "2");

    let report = fs::read_to_string(a.path().join("eval.tsv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next(),
        Some("label\tcorrect\tpredicted\tgold\tprecision\trecall\tf1")
    );
    let all: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(all[0], "all:bio-span");
    let f1: f64 = all[6].parse().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    // two rows per test token, each holding hidden = 8 values
    let vectors = fs::read_to_string(a.path().join("vectors.tsv")).unwrap();
    let tokens = fs::read_to_string(a.path().join("data/test.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .count();
    assert_eq!(vectors.lines().count(), 1 + 2 * tokens);
    assert!(vectors.lines().skip(1).all(|l| l.split('\t').count() == 5 + 8));

    for f in [
        "base.ckpt",
        "mem.bin",
        "pnma.ckpt",
        "eval.tsv",
        "pred.txt",
        "dis.tsv",
        "vectors.tsv",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
