//! Column-format corpora, BIO span coding, vocabularies and precomputed
//! per-token embedding files.
//!
//! Corpus format: one token per line as `token predicate_bit tag`, blank
//! lines between instances. A line starting with `#` that is not itself a
//! valid three-column row is a comment; `# sent_id = X` names the next
//! instance. A sentence with several predicates appears as several blocks.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const UNK: u32 = 0;
pub const PAD: u32 = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";
pub const OUTSIDE: &str = "O";
pub const NULL_ROLE: &str = "_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SchemeKind {
    /// Span arguments encoded as B-x / I-x / O.
    #[default]
    BioSpan,
    /// One role per token with `_` as the null role.
    PerTokenRole,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::BioSpan => "bio-span",
            SchemeKind::PerTokenRole => "per-token-role",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bio-span" => Ok(SchemeKind::BioSpan),
            "per-token-role" => Ok(SchemeKind::PerTokenRole),
            other => Err(Error::Config(format!("unknown tag scheme {other:?}"))),
        }
    }

    /// The label that marks "no argument" under this scheme.
    pub fn null_label(self) -> &'static str {
        match self {
            SchemeKind::BioSpan => OUTSIDE,
            SchemeKind::PerTokenRole => NULL_ROLE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub sentence_id: String,
    pub tokens: Vec<String>,
    pub predicate_index: usize,
    pub predicate_bits: Vec<u8>,
    pub gold_tags: Vec<String>,
    pub scheme: SchemeKind,
    /// First line of the block in its source file (1-based, 0 if synthetic).
    pub line: usize,
    /// Precomputed contextual embeddings, `len × dim`.
    pub external: Option<Tensor<f32>>,
}

impl Instance {
    pub fn new(
        sentence_id: impl Into<String>,
        tokens: Vec<String>,
        predicate_index: usize,
        gold_tags: Vec<String>,
    ) -> Result<Self> {
        if tokens.len() != gold_tags.len() || predicate_index >= tokens.len() {
            return Err(Error::Input(format!(
                "instance with {} tokens, {} tags, predicate at {predicate_index}",
                tokens.len(),
                gold_tags.len()
            )));
        }
        let mut predicate_bits = vec![0u8; tokens.len()];
        predicate_bits[predicate_index] = 1;
        Ok(Instance {
            sentence_id: sentence_id.into(),
            tokens,
            predicate_index,
            predicate_bits,
            gold_tags,
            scheme: SchemeKind::BioSpan,
            line: 0,
            external: None,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn predicate(&self) -> &str {
        &self.tokens[self.predicate_index]
    }
}

fn parse_row(line: &str) -> Option<(String, u8, String)> {
    let cols: Vec<&str> = line.split_whitespace().collect();
    if cols.len() != 3 {
        return None;
    }
    let bit = match cols[1] {
        "0" => 0,
        "1" => 1,
        _ => return None,
    };
    Some((cols[0].to_string(), bit, cols[2].to_string()))
}

#[derive(Default)]
struct Block {
    id: Option<String>,
    start: usize,
    rows: Vec<(String, u8, String)>,
}

/// Parse a corpus held in memory.
pub fn parse_conll_str(text: &str, scheme: SchemeKind, permissive: bool) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    let mut block = Block::default();
    let mut ordinal = 0usize;

    let mut finish = |block: &mut Block, out: &mut Vec<Instance>| -> Result<()> {
        if block.rows.is_empty() {
            return Ok(());
        }
        let b = std::mem::take(block);
        let id = b.id.unwrap_or_else(|| ordinal.to_string());
        ordinal += 1;
        let preds: Vec<usize> = b
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.1 == 1)
            .map(|(i, _)| i)
            .collect();
        match preds.len() {
            1 => {}
            0 if permissive => {
                warn!("skipping block at line {} ({id}): no predicate bit set", b.start);
                return Ok(());
            }
            0 => {
                return Err(Error::Structure {
                    line: b.start,
                    msg: "no predicate bit set".into(),
                })
            }
            n => {
                return Err(Error::Structure {
                    line: b.start,
                    msg: format!("{n} predicate bits set, expected exactly one"),
                })
            }
        }
        let mut tokens = Vec::with_capacity(b.rows.len());
        let mut bits = Vec::with_capacity(b.rows.len());
        let mut tags = Vec::with_capacity(b.rows.len());
        for (t, bit, tag) in b.rows {
            tokens.push(t);
            bits.push(bit);
            tags.push(tag);
        }
        out.push(Instance {
            sentence_id: id,
            tokens,
            predicate_index: preds[0],
            predicate_bits: bits,
            gold_tags: tags,
            scheme,
            line: b.start,
            external: None,
        });
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            finish(&mut block, &mut out)?;
            continue;
        }
        if line.starts_with('#') && parse_row(line).is_none() {
            if let Some(rest) = line.trim_start_matches('#').trim().strip_prefix("sent_id") {
                let id = rest.trim().trim_start_matches('=').trim();
                if !block.rows.is_empty() {
                    finish(&mut block, &mut out)?;
                }
                block.id = Some(id.to_string());
            }
            continue;
        }
        let cols = line.split_whitespace().count();
        if cols != 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 3 columns (token, predicate bit, tag), found {cols}"),
            });
        }
        let row = parse_row(line).ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "predicate bit must be 0 or 1".into(),
        })?;
        if block.rows.is_empty() {
            block.start = lineno;
        }
        block.rows.push(row);
    }
    finish(&mut block, &mut out)?;
    Ok(out)
}

pub fn parse_conll_file(path: &Path, scheme: SchemeKind, permissive: bool) -> Result<Vec<Instance>> {
    let text = fs::read_to_string(path)?;
    parse_conll_str(&text, scheme, permissive)
}

pub fn serialize_conll(instances: &[Instance]) -> String {
    let mut s = String::new();
    for inst in instances {
        let _ = writeln!(s, "# sent_id = {}", inst.sentence_id);
        for i in 0..inst.len() {
            let _ = writeln!(s, "{} {} {}", inst.tokens[i], inst.predicate_bits[i], inst.gold_tags[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_conll_file(path: &Path, instances: &[Instance]) -> Result<()> {
    fs::write(path, serialize_conll(instances))?;
    Ok(())
}

/// An argument span with inclusive token bounds.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub role: String,
}

impl Span {
    pub fn new(start: usize, end: usize, role: impl Into<String>) -> Self {
        Span {
            start,
            end,
            role: role.into(),
        }
    }
}

/// Decode BIO tags into maximal spans.
///
/// Lenient rule: an `I-x` that does not continue an open span of role `x`
/// starts a new span of role `x`. A bare non-`O` label is a one-token span.
pub fn bio_decode_spans<S: AsRef<str>>(tags: &[S]) -> BTreeSet<Span> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, t) in tags.iter().enumerate() {
        let t = t.as_ref();
        let (kind, role) = if t == OUTSIDE {
            ('O', "")
        } else if let Some(r) = t.strip_prefix("B-") {
            ('B', r)
        } else if let Some(r) = t.strip_prefix("I-") {
            ('I', r)
        } else {
            ('S', t)
        };
        let continues = kind == 'I' && matches!(open, Some((_, r)) if r == role);
        if !continues {
            if let Some((s, r)) = open.take() {
                spans.insert(Span::new(s, i - 1, r));
            }
            match kind {
                'B' | 'I' => open = Some((i, role)),
                'S' => {
                    spans.insert(Span::new(i, i, role));
                }
                _ => {}
            }
        }
    }
    if let Some((s, r)) = open {
        spans.insert(Span::new(s, tags.len() - 1, r));
    }
    spans
}

/// Encode non-overlapping spans as a BIO sequence of length `n`.
pub fn bio_encode_spans(spans: &BTreeSet<Span>, n: usize) -> Vec<String> {
    let mut tags = vec![OUTSIDE.to_string(); n];
    for s in spans {
        tags[s.start] = format!("B-{}", s.role);
        for t in tags.iter_mut().take(s.end + 1).skip(s.start + 1) {
            *t = format!("I-{}", s.role);
        }
    }
    tags
}

/// Strip a `B-`/`I-` prefix; `O` stays `O`.
pub fn role_of(tag: &str) -> &str {
    tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-")).unwrap_or(tag)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
    pub min_frequency: usize,
}

impl Vocabulary {
    pub fn from_words(words: impl IntoIterator<Item = String>, min_frequency: usize) -> Self {
        let mut v = Vocabulary {
            words: vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()],
            index: HashMap::new(),
            min_frequency,
        };
        v.index.insert(UNK_TOKEN.to_string(), UNK);
        v.index.insert(PAD_TOKEN.to_string(), PAD);
        for w in words {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len() as u32);
                v.words.push(w);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Retained words in id order, specials excluded.
    pub fn words(&self) -> &[String] {
        &self.words[2..]
    }
}

/// Tag labels in first-occurrence order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TagSet {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl TagSet {
    pub fn from_labels(labels: impl IntoIterator<Item = String>) -> Self {
        let mut t = TagSet::default();
        for l in labels {
            t.insert(l);
        }
        t
    }

    pub fn insert(&mut self, label: String) -> u32 {
        if let Some(&id) = self.index.get(&label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.index.insert(label.clone(), id);
        self.labels.push(label);
        id
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Encode a tag sequence; labels outside the set are a lookup error.
    pub fn encode<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<u32>> {
        tags.iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| Error::Lookup(format!("tag {:?} not in tag set", t.as_ref())))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.label(i).to_string()).collect()
    }
}

/// Word vocabulary with a frequency cutoff. Case is preserved.
pub fn build_vocab(corpus: &[Instance], min_frequency: usize) -> Vocabulary {
    let min_frequency = min_frequency.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for inst in corpus {
        for t in &inst.tokens {
            let c = counts.entry(t.as_str()).or_insert_with(|| {
                order.push(t.as_str());
                0
            });
            *c += 1;
        }
    }
    let kept = order
        .into_iter()
        .filter(|w| counts[w] >= min_frequency)
        .map(str::to_string);
    Vocabulary::from_words(kept, min_frequency)
}

pub fn build_tagset(corpus: &[Instance]) -> TagSet {
    TagSet::from_labels(corpus.iter().flat_map(|i| i.gold_tags.iter().cloned()))
}

/// Attach precomputed per-token vectors to `instances`.
///
/// File rows are `sentence_id token_index v1 .. vd`. Returns the dimension.
pub fn load_external_embeddings(path: &Path, instances: &mut [Instance]) -> Result<usize> {
    let text = fs::read_to_string(path)?;
    attach_external_embeddings(&text, instances)
}

pub fn attach_external_embeddings(text: &str, instances: &mut [Instance]) -> Result<usize> {
    let mut dim: Option<usize> = None;
    let mut table: HashMap<(String, usize), Vec<f32>> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split_whitespace();
        let sid = cols.next().unwrap_or_default().to_string();
        let tok: usize = cols
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::Format(format!("line {}: missing token index", i + 1)))?;
        let vec: Vec<f32> = cols
            .map(|c| c.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        match dim {
            None => dim = Some(vec.len()),
            Some(d) if d != vec.len() => {
                return Err(Error::Format(format!(
                    "line {}: vector of dimension {} after rows of dimension {d}",
                    i + 1,
                    vec.len()
                )))
            }
            _ => {}
        }
        table.insert((sid, tok), vec);
    }
    let dim = dim.unwrap_or(0);
    for inst in instances.iter_mut() {
        let mut data = Vec::with_capacity(inst.len() * dim);
        for t in 0..inst.len() {
            let key = (inst.sentence_id.clone(), t);
            let v = table.get(&key).ok_or_else(|| Error::Coverage {
                sentence_id: inst.sentence_id.clone(),
                token_index: t,
            })?;
            data.extend_from_slice(v);
        }
        inst.external = Some(Tensor::from_vec(&[inst.len(), dim], data)?);
    }
    Ok(dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIXTURE: &str = "\
# sent_id = a
The 0 B-A0
cat 0 I-A0
sat 1 B-V
down 0 O

# sent_id = b
Dogs 0 B-A0
bark 1 B-V
";

    fn tags(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_fixture_and_empty() {
        assert!(parse_conll_str("", SchemeKind::BioSpan, false).unwrap().is_empty());
        let inst = parse_conll_str(FIXTURE, SchemeKind::BioSpan, false).unwrap();
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[0].sentence_id, "a");
        assert_eq!(inst[0].tokens, tags(&["The", "cat", "sat", "down"]));
        assert_eq!(inst[0].predicate_bits, vec![0, 0, 1, 0]);
        assert_eq!(inst[0].predicate_index, 2);
        assert_eq!(inst[0].gold_tags, tags(&["B-A0", "I-A0", "B-V", "O"]));
        assert_eq!(inst[0].line, 2);
        assert_eq!(inst[1].tokens, tags(&["Dogs", "bark"]));
        assert_eq!(inst[1].predicate_index, 1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_conll_str("a 0 O\nb 1\n", SchemeKind::BioSpan, false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let err = parse_conll_str("a 1 O\nb 1 O\n", SchemeKind::BioSpan, false).unwrap_err();
        assert!(matches!(err, Error::Structure { line: 1, .. }), "{err}");

        let zero = "x 0 O\n\ny 1 O\n";
        assert!(matches!(
            parse_conll_str(zero, SchemeKind::BioSpan, false).unwrap_err(),
            Error::Structure { .. }
        ));
        let ok = parse_conll_str(zero, SchemeKind::BioSpan, true).unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].tokens, tags(&["y"]));
    }

    #[test]
    fn hash_token_rows_are_not_comments() {
        let inst = parse_conll_str("# 0 O\nx 1 B-V\n", SchemeKind::BioSpan, false).unwrap();
        assert_eq!(inst[0].tokens, tags(&["#", "x"]));
    }

    #[test]
    fn parse_serialize_parse_identity() {
        let a = parse_conll_str(FIXTURE, SchemeKind::BioSpan, false).unwrap();
        let text = serialize_conll(&a);
        let mut b = parse_conll_str(&text, SchemeKind::BioSpan, false).unwrap();
        for (x, y) in a.iter().zip(b.iter_mut()) {
            y.line = x.line;
        }
        assert_eq!(a, b);
    }

    #[test]
    fn bio_examples() {
        assert!(bio_decode_spans(&["O", "O"]).is_empty());
        let s = bio_decode_spans(&["B-A0", "I-A0", "O", "B-V"]);
        assert_eq!(
            s.into_iter().collect::<Vec<_>>(),
            vec![Span::new(0, 1, "A0"), Span::new(3, 3, "V")]
        );
        let s = bio_decode_spans(&["I-A1", "I-A1", "O"]);
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec![Span::new(0, 1, "A1")]);
        let s = bio_decode_spans(&["B-A0", "I-A1"]);
        assert_eq!(
            s.into_iter().collect::<Vec<_>>(),
            vec![Span::new(0, 0, "A0"), Span::new(1, 1, "A1")]
        );
    }

    #[test]
    fn vocab_examples() {
        let v = build_vocab(&[], 2);
        assert_eq!(v.len(), 2);
        assert_eq!(v.id(UNK_TOKEN), UNK);
        assert_eq!(v.id(PAD_TOKEN), PAD);

        let corpus = vec![Instance::new("0", tags(&["a", "b", "a", "a"]), 0, tags(&["O"; 4])).unwrap()];
        let v = build_vocab(&corpus, 2);
        assert_eq!(v.words(), &tags(&["a"])[..]);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), UNK);

        let corpus = vec![Instance::new("0", tags(&["x", "y", "z"]), 0, tags(&["O"; 3])).unwrap()];
        let v = build_vocab(&corpus, 2);
        assert!(v.words().is_empty());
        assert!(["x", "y", "z"].iter().all(|w| v.id(w) == UNK));

        let corpus = vec![Instance::new("0", tags(&["A", "a", "A"]), 0, tags(&["O"; 3])).unwrap()];
        let v = build_vocab(&corpus, 2);
        assert_eq!(v.id("A"), 2);
        assert_eq!(v.id("a"), UNK);
    }

    #[test]
    fn tagset_first_occurrence_order() {
        let inst = parse_conll_str(FIXTURE, SchemeKind::BioSpan, false).unwrap();
        let t = build_tagset(&inst);
        assert_eq!(t.labels(), &tags(&["B-A0", "I-A0", "B-V", "O"])[..]);
        assert!(t.encode(&["B-A9"]).is_err());
    }

    #[test]
    fn external_embeddings() {
        let mut inst = parse_conll_str(FIXTURE, SchemeKind::BioSpan, false).unwrap();
        let mut rows = String::new();
        for (sid, n) in [("a", 4), ("b", 2)] {
            for t in 0..n {
                rows.push_str(&format!("{sid} {t} {t}.0 1.5 -2\n"));
            }
        }
        let dim = attach_external_embeddings(&rows, &mut inst).unwrap();
        assert_eq!(dim, 3);
        let e = inst[0].external.as_ref().unwrap();
        assert_eq!(e.shape(), &[4, 3]);
        assert_eq!(e.row(3), &[3.0, 1.5, -2.0]);

        let bad = "a 0 1 2 3 4 5 6 7 8\na 1 1 2 3 4 5 6 7\n";
        assert!(matches!(
            attach_external_embeddings(bad, &mut inst).unwrap_err(),
            Error::Format(_)
        ));

        let missing: String = rows
            .lines()
            .filter(|l| !l.starts_with("b 1"))
            .map(|l| format!("{l}\n"))
            .collect();
        match attach_external_embeddings(&missing, &mut inst).unwrap_err() {
            Error::Coverage {
                sentence_id,
                token_index,
            } => {
                assert_eq!((sentence_id.as_str(), token_index), ("b", 1));
            }
            e => panic!("unexpected {e}"),
        }
    }

    fn well_formed_bio() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec((0u8..3, 0u8..3), 1..20).prop_map(|steps| {
            let roles = ["A0", "A1", "AM-LOC"];
            let mut out: Vec<String> = Vec::new();
            let mut open: Option<u8> = None;
            for (kind, role) in steps {
                match (kind, open) {
                    (0, _) => {
                        out.push(OUTSIDE.into());
                        open = None;
                    }
                    (1, Some(r)) => out.push(format!("I-{}", roles[r as usize])),
                    _ => {
                        out.push(format!("B-{}", roles[role as usize]));
                        open = Some(role);
                    }
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn bio_round_trip(tags in well_formed_bio()) {
            let spans = bio_decode_spans(&tags);
            prop_assert_eq!(bio_encode_spans(&spans, tags.len()), tags);
        }
    }
}
