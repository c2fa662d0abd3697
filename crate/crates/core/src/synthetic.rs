//! Seeded template corpus for desk-scale experiments.
//!
//! Every sentence is `[PP] subject [ADV] [not] predicate object PP* .` and
//! tags follow a majority rule: the subject is `A0`, the object `A1`, a
//! prepositional phrase takes the role of its preposition (`to` → `A2`,
//! `in`/`at`/`on` → `AM-LOC`, `during`/`before`/`after` → `AM-TMP`,
//! `with` → `AM-MNR`), manner adverbs are `AM-MNR`, `not` is `AM-NEG`.
//!
//! A planted set of rare predicates contradicts the rule: half of them swap
//! subject and object (`A1` … `A0`), the other half tag them `A1` … `A2`.
//! Exactly `round(n · exception_rate)` sentences per split use one of them.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::dataio::{write_conll_file, Instance};
use crate::error::{Error, Result};
use crate::rng::{self, stream, SeededRng};

const DETERMINERS: &[&str] = &["the", "a", "this", "every"];
const ADJECTIVES: &[&str] = &[
    "old", "new", "small", "large", "red", "quiet", "busy", "young", "bright", "dark", "famous", "local", "strange",
    "simple", "heavy", "empty", "rich", "calm", "early", "late",
];
const NOUNS: &[&str] = &[
    "man", "woman", "child", "dog", "cat", "teacher", "doctor", "farmer", "driver", "student", "city", "house",
    "river", "market", "school", "garden", "letter", "book", "car", "horse", "song", "plan", "report", "bridge",
    "village", "company", "friend", "officer", "painter", "window", "table", "boat", "road", "forest", "museum",
    "station", "storm", "winter", "summer", "meeting", "war", "festival", "game", "night", "morning", "lesson",
    "message", "gift", "key", "map", "coin", "box", "ship", "tower", "lake", "hill", "office", "kitchen", "engine",
    "basket",
];
const PROPER: &[&str] = &[
    "Anna", "Boris", "Clara", "David", "Elena", "Felix", "Grace", "Hugo", "Iris", "Jonas", "Karin", "Leo", "Maria",
    "Nils", "Olga", "Paul", "Rosa", "Simon", "Tara", "Viktor",
];
const ADVERBS: &[&str] = &["quickly", "slowly", "carefully", "quietly", "happily", "suddenly"];
const NEGATION: &str = "not";
const PREPOSITIONS: &[(&str, &str)] = &[
    ("to", "A2"),
    ("in", "AM-LOC"),
    ("at", "AM-LOC"),
    ("on", "AM-LOC"),
    ("during", "AM-TMP"),
    ("before", "AM-TMP"),
    ("after", "AM-TMP"),
    ("with", "AM-MNR"),
];
const TEMPORAL: &[&str] = &["during", "before", "after"];
const REGULAR_PREDICATES: &[&str] = &[
    "saw", "found", "built", "opened", "closed", "visited", "painted", "carried", "bought", "sold", "wrote", "read",
    "moved", "cleaned", "watched", "helped", "called", "followed", "brought", "lifted", "pushed", "pulled", "washed",
    "fixed", "broke", "kept", "left", "met", "chose", "drew", "sent", "took", "held", "caught", "threw", "taught",
    "fed", "hid", "won", "lost",
];
/// Rare predicates whose argument pattern contradicts the majority rule.
pub const EXCEPTION_PREDICATES: &[&str] = &[
    "frightened",
    "pleased",
    "worried",
    "amazed",
    "bored",
    "annoyed",
    "puzzled",
    "delighted",
    "shocked",
    "confused",
    "inherited",
    "received",
    "obtained",
    "suffered",
    "underwent",
    "endured",
    "acquired",
    "gained",
    "faced",
    "earned",
];
pub const NONE_LABEL: &str = "O";

/// Mean noun-phrase length under the generator's distribution
/// (`DET N` 0.6, `DET ADJ N` 0.3, proper noun 0.1).
pub const MEAN_NP_LEN: f64 = 0.6 * 2.0 + 0.3 * 3.0 + 0.1 * 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub seed: u64,
    pub exception_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train: 2000,
            valid: 300,
            test: 300,
            seed: 1,
            exception_rate: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<Instance>,
    pub valid: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Number of exception sentences planted in a split of `n` sentences.
pub fn exception_count(n: usize, rate: f64) -> usize {
    ((n as f64 * rate).round() as usize).min(n)
}

/// Expected number of tokens whose tag departs from the majority rule.
pub fn expected_exception_tokens(n: usize, rate: f64) -> f64 {
    exception_count(n, rate) as f64 * 2.0 * MEAN_NP_LEN
}

pub fn is_exception_predicate(word: &str) -> bool {
    EXCEPTION_PREDICATES.contains(&word)
}

/// `(subject role, object role)` for a predicate.
fn core_roles(predicate: &str) -> (&'static str, &'static str) {
    match EXCEPTION_PREDICATES.iter().position(|&p| p == predicate) {
        Some(i) if i % 2 == 0 => ("A1", "A0"),
        Some(_) => ("A1", "A2"),
        None => ("A0", "A1"),
    }
}

fn pick<'a>(rng: &mut SeededRng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn noun_phrase(rng: &mut SeededRng) -> Vec<&'static str> {
    let r: f64 = rng.random();
    if r < 0.6 {
        vec![pick(rng, DETERMINERS), pick(rng, NOUNS)]
    } else if r < 0.9 {
        vec![pick(rng, DETERMINERS), pick(rng, ADJECTIVES), pick(rng, NOUNS)]
    } else {
        vec![pick(rng, PROPER)]
    }
}

fn push_phrase(tokens: &mut Vec<String>, tags: &mut Vec<String>, words: &[&str], role: &str) {
    for (i, w) in words.iter().enumerate() {
        tokens.push(w.to_string());
        tags.push(format!("{}-{role}", if i == 0 { "B" } else { "I" }));
    }
}

fn sentence(rng: &mut SeededRng, id: String, predicate: &str) -> Instance {
    let (subj_role, obj_role) = core_roles(predicate);
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    if rng.random::<f64>() < 0.15 {
        let mut pp = vec![pick(rng, TEMPORAL)];
        pp.extend(noun_phrase(rng));
        push_phrase(&mut tokens, &mut tags, &pp, "AM-TMP");
    }
    push_phrase(&mut tokens, &mut tags, &noun_phrase(rng), subj_role);
    if rng.random::<f64>() < 0.2 {
        push_phrase(&mut tokens, &mut tags, &[pick(rng, ADVERBS)], "AM-MNR");
    }
    if rng.random::<f64>() < 0.1 {
        push_phrase(&mut tokens, &mut tags, &[NEGATION], "AM-NEG");
    }
    let predicate_index = tokens.len();
    push_phrase(&mut tokens, &mut tags, &[predicate], "V");
    push_phrase(&mut tokens, &mut tags, &noun_phrase(rng), obj_role);
    let pps = match rng.random::<f64>() {
        r if r < 0.45 => 0,
        r if r < 0.85 => 1,
        _ => 2,
    };
    for _ in 0..pps {
        let (prep, role) = PREPOSITIONS[rng.random_range(0..PREPOSITIONS.len())];
        let mut pp = vec![prep];
        pp.extend(noun_phrase(rng));
        push_phrase(&mut tokens, &mut tags, &pp, role);
    }
    tokens.push(".".into());
    tags.push(NONE_LABEL.into());
    Instance::new(id, tokens, predicate_index, tags).expect("generator emits one predicate")
}

fn split(rng: &mut SeededRng, name: &str, n: usize, rate: f64) -> Vec<Instance> {
    let planted = exception_count(n, rate);
    let order = rng::permutation(rng, n);
    let mut is_exception = vec![false; n];
    order.iter().take(planted).for_each(|&i| is_exception[i] = true);
    (0..n)
        .map(|i| {
            let pool = if is_exception[i] {
                EXCEPTION_PREDICATES
            } else {
                REGULAR_PREDICATES
            };
            let predicate = pick(rng, pool);
            sentence(rng, format!("{name}-{i}"), predicate)
        })
        .collect()
}

pub fn gen_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if config.train == 0 || config.valid == 0 || config.test == 0 {
        return Err(Error::Config("synthetic split sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.exception_rate) {
        return Err(Error::Config(format!(
            "exception_rate {} outside [0, 1]",
            config.exception_rate
        )));
    }
    let mut rng = rng::seeded(config.seed, stream::SYNTHETIC);
    Ok(SyntheticCorpus {
        train: split(&mut rng, "train", config.train, config.exception_rate),
        valid: split(&mut rng, "valid", config.valid, config.exception_rate),
        test: split(&mut rng, "test", config.test, config.exception_rate),
    })
}

/// Write `train.txt`, `valid.txt`, `test.txt` into `dir`.
pub fn write_synthetic(corpus: &SyntheticCorpus, dir: &Path) -> Result<[PathBuf; 3]> {
    std::fs::create_dir_all(dir)?;
    let paths = [dir.join("train.txt"), dir.join("valid.txt"), dir.join("test.txt")];
    write_conll_file(&paths[0], &corpus.train)?;
    write_conll_file(&paths[1], &corpus.valid)?;
    write_conll_file(&paths[2], &corpus.test)?;
    Ok(paths)
}

fn preposition_role(word: &str) -> Option<&'static str> {
    PREPOSITIONS.iter().find(|(p, _)| *p == word).map(|(_, r)| *r)
}

/// Tags implied by the majority rule alone, recovered from the tokens and
/// the predicate position.
pub fn majority_tags(inst: &Instance) -> Vec<String> {
    let mut tags = Vec::with_capacity(inst.len());
    let mut open: Option<&str> = None;
    // a preposition was just seen and its noun phrase has not started
    let mut awaiting_np = false;
    for (i, w) in inst.tokens.iter().enumerate() {
        let w = w.as_str();
        let tag = if i == inst.predicate_index {
            open = None;
            "B-V".to_string()
        } else if w == "." {
            open = None;
            NONE_LABEL.to_string()
        } else if let Some(r) = preposition_role(w) {
            open = Some(r);
            awaiting_np = true;
            format!("B-{r}")
        } else if ADVERBS.contains(&w) {
            open = None;
            "B-AM-MNR".to_string()
        } else if w == NEGATION {
            open = None;
            "B-AM-NEG".to_string()
        } else if DETERMINERS.contains(&w) || PROPER.contains(&w) {
            match open {
                Some(r) if awaiting_np => {
                    awaiting_np = false;
                    format!("I-{r}")
                }
                _ => {
                    let r = if i < inst.predicate_index { "A0" } else { "A1" };
                    open = Some(r);
                    format!("B-{r}")
                }
            }
        } else {
            format!("I-{}", open.unwrap_or("A1"))
        };
        tags.push(tag);
    }
    tags
}
