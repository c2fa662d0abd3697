//! `pnma` command-line pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format/config error,
//! 3 numeric failure.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use pnma_core::analysis::{
    confusion_diff, disagreement_report, dump_to_tsv, evaluate, neighbor_dump, predicate_frequencies,
    rank_distribution, vector_export, BucketEdges,
};
use pnma_core::checkpoint;
use pnma_core::dataio::{
    build_tagset, build_vocab, load_external_embeddings, parse_conll_file, serialize_conll, Instance,
};
use pnma_core::digest::to_hex;
use pnma_core::memory::{
    build_memory, deserialize_memory, knn_query_batch, sampler_registry, serialize_memory, ActivationMemory,
};
use pnma_core::synthetic::{gen_synthetic, write_synthetic};
use pnma_core::training::{predict_corpus, train_base, train_pnma, EpochLog, LOG_HEADER};
use pnma_core::{Error, Model, Result};

pub mod config;

use config::{RunConfig, CONFIG_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "pnma",
    version,
    about = "Sequence tagger with a parameterized neighborhood memory",
    after_help = "Settings come from --config (or $PNMA_CONFIG), then --set KEY=VALUE, then explicit flags."
)]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for encoding, retrieval and analysis.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate corpora and write the vocabulary and tag inventory.
    Prepare(PrepareArgs),
    /// Phase 1: train encoder, emission and CRF layers.
    TrainBase(TrainBaseArgs),
    /// Sample training-token activations of a phase-1 model into a memory file.
    BuildMemory(BuildMemoryArgs),
    /// Phase 2: train neighborhood, emission and CRF layers on a frozen encoder.
    TrainPnma(TrainPnmaArgs),
    /// Tag a corpus.
    Predict(PredictArgs),
    /// Score a model on a corpus and write an evaluation report.
    Evaluate(PredictArgs),
    /// Diagnostics over a model, its memory and a corpus.
    Analyze {
        #[command(subcommand)]
        which: AnalyzeCommand,
    },
    /// Write a seeded template corpus (train/valid/test).
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Subcommand, Debug)]
enum AnalyzeCommand {
    /// Rank of the first same-label neighbor, split by base correctness.
    RankDist(RankDistArgs),
    /// Confusion(PNMA) minus confusion(base) over the most frequent labels.
    ConfusionDiff(CompareArgs),
    /// Four-scenario disagreement counts with frequency breakdowns.
    Disagreement(DisagreementArgs),
    /// Nearest memory entries of one token with context snippets.
    Neighbors(NeighborsArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainBaseArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Checkpoint to write; the epoch log goes to `<output>.log`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildMemoryArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainPnmaArgs {
    /// Phase-1 checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Memory for a phase-2 model; without it the base path is used.
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RankDistArgs {
    /// Phase-1 checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Prefix of `<prefix>.correct.tsv` and `<prefix>.incorrect.tsv`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Skip each token's own memory entries (for queries from the training set).
    #[arg(long)]
    exclude_self: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Phase-1 checkpoint.
    #[arg(long)]
    base_model: Option<PathBuf>,
    /// Phase-2 checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Training corpus (predicate frequencies).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DisagreementArgs {
    #[command(flatten)]
    compare: CompareArgs,
    /// Also write per-token encoder and neighborhood vectors with their scenario.
    #[arg(long)]
    vectors: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NeighborsArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    memory: Option<PathBuf>,
    /// Corpus holding the query sentence.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Training corpus (text of memory entries).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    sentence: String,
    #[arg(long)]
    token: usize,
    /// Neighbors to list (defaults to the configured K).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenSyntheticArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Parse `argv` (program name first), run one stage, return the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let (mut cfg, seen) = match &path {
        Some(p) => RunConfig::load(p)?,
        None => (RunConfig::default(), Vec::new()),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.synthetic.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if path.is_some() {
        let defaulted: Vec<&str> = RunConfig::known_keys()
            .into_iter()
            .filter(|k| !config::PATH_KEYS.contains(k) && !seen.iter().any(|s| s == k))
            .collect();
        if !defaulted.is_empty() {
            info!("defaulted config keys: {}", defaulted.join(", "));
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let threads = cfg.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_command(cli.command, &cfg))
}

/// Flag value, else config path key, else an error naming both.
fn need(flag: Option<PathBuf>, cfg: &RunConfig, key: &str, flag_name: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.path(key).map(Path::to_path_buf))
        .ok_or_else(|| Error::Config(format!("missing --{flag_name} (config key {key})")))
}

fn optional(flag: Option<PathBuf>, cfg: &RunConfig, key: &str) -> Option<PathBuf> {
    flag.or_else(|| cfg.path(key).map(Path::to_path_buf))
}

fn load_corpus(path: &Path, cfg: &RunConfig) -> Result<Vec<Instance>> {
    let mut instances = parse_conll_file(path, cfg.scheme, cfg.permissive)?;
    if let Some(emb) = cfg.path("embeddings") {
        load_external_embeddings(emb, &mut instances)?;
    }
    info!("{}: {} instances", path.display(), instances.len());
    Ok(instances)
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    checkpoint::load(path)
}

fn load_memory_for(path: &Path, model: &Model<f32>) -> Result<ActivationMemory> {
    let memory = deserialize_memory(path)?;
    model.check_memory(&memory)?;
    Ok(memory)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn epoch_logger(lines: &mut String) -> impl FnMut(&EpochLog) + '_ {
    lines.push_str(LOG_HEADER);
    lines.push('\n');
    move |l: &EpochLog| {
        info!("{l}");
        lines.push_str(&l.to_string());
        lines.push('\n');
    }
}

fn run_command(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a, cfg),
        Command::TrainBase(a) => {
            let train = load_corpus(&need(a.train, cfg, "train_data", "train")?, cfg)?;
            let valid = match optional(a.valid, cfg, "valid_data") {
                Some(p) => load_corpus(&p, cfg)?,
                None => Vec::new(),
            };
            let output = need(a.output, cfg, "model", "output")?;
            let mut lines = String::new();
            let outcome = train_base::<f32>(&train, &valid, &cfg.train, cfg.scheme, &mut epoch_logger(&mut lines))?;
            let digest = checkpoint::save(&outcome.model, &output)?;
            write(&with_suffix(&output, ".log"), &lines)?;
            eprintln!(
                "saved {} (best epoch {}, digest {})",
                output.display(),
                outcome.best_epoch,
                to_hex(&digest)
            );
            Ok(())
        }
        Command::BuildMemory(a) => {
            let model = load_model(&need(a.model, cfg, "model", "model")?)?;
            let train = load_corpus(&need(a.train, cfg, "train_data", "train")?, cfg)?;
            let output = need(a.output, cfg, "memory", "output")?;
            let sampler = sampler_registry().get(&cfg.train.sampler)?;
            let memory = build_memory(
                &model,
                &train,
                cfg.train.memory_fraction,
                cfg.train.seed,
                sampler.as_ref(),
            )?;
            serialize_memory(&memory, &output)?;
            eprintln!(
                "saved {} ({} entries, width {})",
                output.display(),
                memory.len(),
                memory.width()
            );
            Ok(())
        }
        Command::TrainPnma(a) => {
            let base = load_model(&need(a.model, cfg, "base_model", "model")?)?;
            let memory = deserialize_memory(&need(a.memory, cfg, "memory", "memory")?)?;
            let train = load_corpus(&need(a.train, cfg, "train_data", "train")?, cfg)?;
            let valid = match optional(a.valid, cfg, "valid_data") {
                Some(p) => load_corpus(&p, cfg)?,
                None => Vec::new(),
            };
            let output = need(a.output, cfg, "model", "output")?;
            let mut lines = String::new();
            let outcome = train_pnma(
                &base,
                &memory,
                &train,
                &valid,
                &cfg.train,
                &mut epoch_logger(&mut lines),
            )?;
            let digest = checkpoint::save(&outcome.model, &output)?;
            write(&with_suffix(&output, ".log"), &lines)?;
            eprintln!(
                "saved {} (best epoch {}, digest {})",
                output.display(),
                outcome.best_epoch,
                to_hex(&digest)
            );
            eprintln!(
                "phase-2 wall time {:.3} s; retrieval {:.3} s over {} tokens ({:.3e} s/token)",
                outcome.wall_secs,
                outcome.retrieval_secs,
                outcome.retrieved_tokens,
                outcome.retrieval_secs_per_token()
            );
            Ok(())
        }
        Command::Predict(a) => {
            let (model, memory, input) = predict_inputs(&a, cfg)?;
            let output = need(a.output, cfg, "output", "output")?;
            let start = Instant::now();
            let pred = predict_corpus(&model, memory.as_ref(), &input)?;
            report_timing(&input, start, memory.is_some());
            let tagged: Vec<Instance> = input
                .into_iter()
                .zip(pred)
                .map(|(mut inst, p)| {
                    inst.gold_tags = p;
                    inst
                })
                .collect();
            write(&output, &serialize_conll(&tagged))
        }
        Command::Evaluate(a) => {
            let (model, memory, input) = predict_inputs(&a, cfg)?;
            let output = need(a.output, cfg, "output", "output")?;
            let start = Instant::now();
            let pred = predict_corpus(&model, memory.as_ref(), &input)?;
            report_timing(&input, start, memory.is_some());
            let report = evaluate(model.config.scheme, &input, &pred)?;
            write(&output, &report.to_tsv())?;
            eprintln!("P {:.4} R {:.4} F1 {:.4}", report.precision, report.recall, report.f1);
            Ok(())
        }
        Command::Analyze { which } => analyze(which, cfg),
        Command::GenSynthetic(a) => {
            let dir = need(a.out_dir, cfg, "out_dir", "out-dir")?;
            let corpus = gen_synthetic(&cfg.synthetic)?;
            let paths = write_synthetic(&corpus, &dir)?;
            for p in &paths {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn report_timing(input: &[Instance], start: Instant, pnma: bool) {
    let secs = start.elapsed().as_secs_f64();
    let tokens: usize = input.iter().map(Instance::len).sum();
    if tokens > 0 {
        eprintln!(
            "{} prediction: {:.3} s for {tokens} tokens ({:.3e} s/token)",
            if pnma { "PNMA" } else { "base" },
            secs,
            secs / tokens as f64
        );
    }
}

fn predict_inputs(a: &PredictArgs, cfg: &RunConfig) -> Result<(Model<f32>, Option<ActivationMemory>, Vec<Instance>)> {
    let model = load_model(&need(a.model.clone(), cfg, "model", "model")?)?;
    let memory = match optional(a.memory.clone(), cfg, "memory") {
        Some(p) if model.neighborhood.is_some() => Some(load_memory_for(&p, &model)?),
        Some(_) => {
            warn!("model has no neighborhood parameters; ignoring the memory");
            None
        }
        None if model.neighborhood.is_some() => {
            return Err(Error::Config("a phase-2 model needs --memory".into()));
        }
        None => None,
    };
    let input = load_corpus(&need(a.input.clone(), cfg, "input", "input")?, cfg)?;
    Ok((model, memory, input))
}

fn prepare(a: PrepareArgs, cfg: &RunConfig) -> Result<()> {
    let train = load_corpus(&need(a.train, cfg, "train_data", "train")?, cfg)?;
    for p in [optional(a.valid, cfg, "valid_data"), optional(a.test, cfg, "test_data")]
        .into_iter()
        .flatten()
    {
        load_corpus(&p, cfg)?;
    }
    let out = need(a.out_dir, cfg, "out_dir", "out-dir")?;
    fs::create_dir_all(&out)?;
    let vocab = build_vocab(&train, cfg.train.min_frequency);
    let tags = build_tagset(&train);
    let lines = |xs: &[String]| xs.iter().map(|x| format!("{x}\n")).collect::<String>();
    write(&out.join("vocab.txt"), &lines(vocab.words()))?;
    write(&out.join("tags.txt"), &lines(tags.labels()))?;
    let tokens: usize = train.iter().map(Instance::len).sum();
    let stats = format!(
        "key\tvalue\ninstances\t{}\ntokens\t{tokens}\nvocabulary\t{}\ntags\t{}\n",
        train.len(),
        vocab.len(),
        tags.len()
    );
    write(&out.join("stats.tsv"), &stats)?;
    eprintln!(
        "{} instances, {} word types, {} tags",
        train.len(),
        vocab.len(),
        tags.len()
    );
    Ok(())
}

fn analyze(which: AnalyzeCommand, cfg: &RunConfig) -> Result<()> {
    match which {
        AnalyzeCommand::RankDist(a) => {
            let model = load_model(&need(a.model, cfg, "base_model", "model")?)?;
            let memory = load_memory_for(&need(a.memory, cfg, "memory", "memory")?, &model)?;
            let input = load_corpus(&need(a.input, cfg, "input", "input")?, cfg)?;
            let prefix = need(a.output, cfg, "output", "output")?;
            let dist = rank_distribution(&model, &memory, &input, cfg.train.k, a.exclude_self)?;
            write(&with_suffix(&prefix, ".correct.tsv"), &dist.base_correct.to_tsv())?;
            write(&with_suffix(&prefix, ".incorrect.tsv"), &dist.base_incorrect.to_tsv())?;
            let med = |m: Option<usize>| m.map_or_else(|| "absent".to_string(), |v| v.to_string());
            eprintln!(
                "base-incorrect tokens {} (median rank {}), base-correct tokens {} (median rank {})",
                dist.base_incorrect.total(),
                med(dist.base_incorrect.median()),
                dist.base_correct.total(),
                med(dist.base_correct.median())
            );
            Ok(())
        }
        AnalyzeCommand::ConfusionDiff(a) => {
            let c = compare_inputs(a, cfg)?;
            let diff = confusion_diff(&c.gold, &c.base, &c.pnma, cfg.top_n)?;
            write(&c.output, &diff.to_tsv())
        }
        AnalyzeCommand::Disagreement(a) => {
            let c = compare_inputs(a.compare, cfg)?;
            let train = c
                .train
                .ok_or_else(|| Error::Config("missing --train (config key train_data)".into()))?;
            let freq = predicate_frequencies(&train);
            let pred_freq: Vec<usize> = c
                .input
                .iter()
                .flat_map(|i| std::iter::repeat_n(freq.get(i.predicate()).copied().unwrap_or(0), i.len()))
                .collect();
            let same = same_label_counts(&c.model, &c.memory, &c.input)?;
            let fe = BucketEdges::powers_of_two(pred_freq.iter().copied().max().unwrap_or(1));
            let ne = BucketEdges::powers_of_two(c.model.config.k);
            let report = disagreement_report(&c.gold, &c.base, &c.pnma, &pred_freq, &same, &fe, &ne)?;
            write(&c.output, &report.to_tsv())?;
            if let Some(p) = &a.vectors {
                write(p, &vector_export(&c.model, &c.memory, &c.input, &c.base, &c.pnma)?)?;
            }
            eprintln!(
                "scenarios {:?}, ratio {}",
                report.scenarios,
                report.ratio.map_or_else(|| "inf".to_string(), |r| format!("{r:.3}"))
            );
            Ok(())
        }
        AnalyzeCommand::Neighbors(a) => {
            let model = load_model(&need(a.model, cfg, "base_model", "model")?)?;
            let memory = load_memory_for(&need(a.memory, cfg, "memory", "memory")?, &model)?;
            let input = load_corpus(&need(a.input, cfg, "input", "input")?, cfg)?;
            let train = load_corpus(&need(a.train, cfg, "train_data", "train")?, cfg)?;
            let output = need(a.output, cfg, "output", "output")?;
            let query = input
                .iter()
                .find(|i| i.sentence_id == a.sentence)
                .ok_or_else(|| Error::Dump(format!("no sentence {:?} in the input", a.sentence)))?;
            let mut sources: HashMap<String, &Instance> = HashMap::new();
            for inst in &train {
                sources.entry(inst.sentence_id.clone()).or_insert(inst);
            }
            let k = a.k.unwrap_or(cfg.train.k);
            let window = a.window.unwrap_or(cfg.context_window);
            let entries = neighbor_dump(query, a.token, &model, &memory, k, window, &sources)?;
            write(&output, &dump_to_tsv(&entries))
        }
    }
}

struct Compared {
    model: Model<f32>,
    memory: ActivationMemory,
    input: Vec<Instance>,
    train: Option<Vec<Instance>>,
    gold: Vec<String>,
    base: Vec<String>,
    pnma: Vec<String>,
    output: PathBuf,
}

fn compare_inputs(a: CompareArgs, cfg: &RunConfig) -> Result<Compared> {
    let base_model = load_model(&need(a.base_model, cfg, "base_model", "base-model")?)?;
    let model = load_model(&need(a.model, cfg, "model", "model")?)?;
    if model.neighborhood.is_none() {
        return Err(Error::Compatibility("--model must be a phase-2 checkpoint".into()));
    }
    if model.encoder_digest() != base_model.digest() {
        return Err(Error::Compatibility(
            "the phase-2 model was not trained from the given base model".into(),
        ));
    }
    let memory = load_memory_for(&need(a.memory, cfg, "memory", "memory")?, &model)?;
    let input = load_corpus(&need(a.input, cfg, "input", "input")?, cfg)?;
    let train = match optional(a.train, cfg, "train_data") {
        Some(p) => Some(load_corpus(&p, cfg)?),
        None => None,
    };
    let output = need(a.output, cfg, "output", "output")?;
    let base = predict_corpus(&base_model, None, &input)?.concat();
    let pnma = predict_corpus(&model, Some(&memory), &input)?.concat();
    let gold = input.iter().flat_map(|i| i.gold_tags.iter().cloned()).collect();
    Ok(Compared {
        model,
        memory,
        input,
        train,
        gold,
        base,
        pnma,
        output,
    })
}

/// For every token, how many of its `K` retrieved neighbors carry its gold label.
fn same_label_counts(model: &Model<f32>, memory: &ActivationMemory, input: &[Instance]) -> Result<Vec<usize>> {
    use rayon::prelude::*;
    let per: Vec<Vec<usize>> = input
        .par_iter()
        .map(|inst| {
            let h = model.encode(inst)?;
            let sets = knn_query_batch(&h, memory, model.config.k, &[])?;
            Ok(inst
                .gold_tags
                .iter()
                .zip(&sets)
                .map(|(g, ns)| match model.tags.id(g) {
                    Some(id) => ns.items.iter().filter(|n| n.gold_label == id).count(),
                    None => 0,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per.concat())
}
