//! Evaluation metrics and diagnostics over predictions, memory and model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataio::{bio_decode_spans, Instance, SchemeKind, Span, NULL_ROLE};
use crate::error::{Error, Result};
use crate::memory::{knn_query, knn_query_batch, ActivationMemory, NeighborSet};
use crate::model::Model;
use crate::registry::Registry;
use crate::tensor::Real;

/// The predicate's own span is not an argument and is never scored.
pub const PREDICATE_ROLE: &str = "V";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Counts {
    fn add(&mut self, other: Counts) {
        self.correct += other.correct;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    /// `(P, R, F1)` with 0/0 read as 0.
    pub fn prf(&self) -> (f64, f64, f64) {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.correct, self.predicted);
        let r = ratio(self.correct, self.gold);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub scheme: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub total: Counts,
    pub per_label: BTreeMap<String, Counts>,
}

impl EvalReport {
    fn from_parts(scheme: &str, per_label: BTreeMap<String, Counts>) -> Self {
        let mut total = Counts::default();
        per_label.values().for_each(|c| total.add(*c));
        let (precision, recall, f1) = total.prf();
        EvalReport {
            scheme: scheme.to_string(),
            precision,
            recall,
            f1,
            total,
            per_label,
        }
    }

    /// Pool the counts of several reports (micro average).
    pub fn merge(scheme: &str, reports: impl IntoIterator<Item = EvalReport>) -> Self {
        let mut per_label: BTreeMap<String, Counts> = BTreeMap::new();
        for r in reports {
            for (k, c) in r.per_label {
                per_label.entry(k).or_default().add(c);
            }
        }
        Self::from_parts(scheme, per_label)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("label\tcorrect\tpredicted\tgold\tprecision\trecall\tf1\n");
        let mut row = |name: &str, c: &Counts| {
            let (p, r, f) = c.prf();
            let _ = writeln!(
                s,
                "{name}\t{}\t{}\t{}\t{p:.6}\t{r:.6}\t{f:.6}",
                c.correct, c.predicted, c.gold
            );
        };
        row(&format!("all:{}", self.scheme), &self.total);
        for (k, c) in &self.per_label {
            row(k, c);
        }
        s
    }
}

/// Micro P/R/F1 over exact `(start, end, role)` matches.
pub fn span_prf(gold: &BTreeSet<Span>, pred: &BTreeSet<Span>) -> EvalReport {
    let mut per_label: BTreeMap<String, Counts> = BTreeMap::new();
    for s in gold {
        per_label.entry(s.role.clone()).or_default().gold += 1;
    }
    for s in pred {
        let c = per_label.entry(s.role.clone()).or_default();
        c.predicted += 1;
        if gold.contains(s) {
            c.correct += 1;
        }
    }
    EvalReport::from_parts(SchemeKind::BioSpan.name(), per_label)
}

/// P/R/F1 over non-null labels: precision over predicted non-null tokens,
/// recall over gold non-null tokens.
pub fn token_accuracy<S: AsRef<str>>(gold: &[S], pred: &[S], null_label: &str) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "token_accuracy: {} gold labels vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut per_label: BTreeMap<String, Counts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g != null_label {
            per_label.entry(g.to_string()).or_default().gold += 1;
        }
        if p != null_label {
            let c = per_label.entry(p.to_string()).or_default();
            c.predicted += 1;
            if p == g {
                c.correct += 1;
            }
        }
    }
    Ok(EvalReport::from_parts(SchemeKind::PerTokenRole.name(), per_label))
}

/// How a tagging scheme is scored.
pub trait TagScheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn score(&self, gold: &[String], pred: &[String]) -> Result<EvalReport>;
}

pub struct BioSpanScheme;

impl TagScheme for BioSpanScheme {
    fn name(&self) -> &'static str {
        SchemeKind::BioSpan.name()
    }

    fn score(&self, gold: &[String], pred: &[String]) -> Result<EvalReport> {
        if gold.len() != pred.len() {
            return Err(Error::Input(format!(
                "span scoring: {} gold tags vs {} predicted",
                gold.len(),
                pred.len()
            )));
        }
        let args = |tags: &[String]| -> BTreeSet<Span> {
            bio_decode_spans(tags)
                .into_iter()
                .filter(|s| s.role != PREDICATE_ROLE)
                .collect()
        };
        Ok(span_prf(&args(gold), &args(pred)))
    }
}

pub struct PerTokenRoleScheme;

impl TagScheme for PerTokenRoleScheme {
    fn name(&self) -> &'static str {
        SchemeKind::PerTokenRole.name()
    }

    fn score(&self, gold: &[String], pred: &[String]) -> Result<EvalReport> {
        token_accuracy(gold, pred, NULL_ROLE)
    }
}

pub fn scheme_registry() -> Registry<dyn TagScheme> {
    let mut r: Registry<dyn TagScheme> = Registry::new("scheme");
    r.register("bio-span", || Box::new(BioSpanScheme));
    r.register("per-token-role", || Box::new(PerTokenRoleScheme));
    r
}

/// Corpus-level micro scores of `pred` against the gold tags of `instances`.
pub fn evaluate(scheme: SchemeKind, instances: &[Instance], pred: &[Vec<String>]) -> Result<EvalReport> {
    if instances.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} instances vs {} predictions",
            instances.len(),
            pred.len()
        )));
    }
    let scorer = scheme_registry().get(scheme.name())?;
    let reports = instances
        .iter()
        .zip(pred)
        .map(|(i, p)| scorer.score(&i.gold_tags, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::merge(scorer.name(), reports))
}

// ---------------------------------------------------------------------------
// rank distribution

/// 1-based rank of the first neighbor carrying `gold`, `None` if absent.
pub fn rank_of_first_correct(neighbors: &NeighborSet, gold: u32) -> Option<usize> {
    neighbors.items.iter().position(|n| n.gold_label == gold).map(|p| p + 1)
}

/// Counts over ranks `1..=k` plus a trailing "absent" bucket.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankHistogram {
    pub k: usize,
    pub counts: Vec<usize>,
}

impl RankHistogram {
    pub fn new(k: usize) -> Self {
        RankHistogram {
            k,
            counts: vec![0; k + 1],
        }
    }

    pub fn add(&mut self, rank: Option<usize>) {
        match rank {
            Some(r) if (1..=self.k).contains(&r) => self.counts[r - 1] += 1,
            _ => self.counts[self.k] += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn absent(&self) -> usize {
        self.counts[self.k]
    }

    /// Lower median with "absent" ranked after `k`; `None` when the median
    /// falls in the absent bucket or the histogram is empty.
    pub fn median(&self) -> Option<usize> {
        let n = self.total();
        if n == 0 {
            return None;
        }
        let target = n.div_ceil(2);
        let mut seen = 0;
        for (i, &c) in self.counts.iter().enumerate().take(self.k) {
            seen += c;
            if seen >= target {
                return Some(i + 1);
            }
        }
        None
    }

    /// `rank<TAB>normalized_frequency`, one line per rank then `absent`.
    pub fn to_tsv(&self) -> String {
        let n = self.total();
        let norm = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        let mut s = String::from("rank\tnormalized_frequency\n");
        for (i, &c) in self.counts.iter().enumerate() {
            if i < self.k {
                let _ = writeln!(s, "{}\t{:.6}", i + 1, norm(c));
            } else {
                let _ = writeln!(s, "absent\t{:.6}", norm(c));
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankDistribution {
    pub base_correct: RankHistogram,
    pub base_incorrect: RankHistogram,
}

/// For every token of `instances`: its rank of first correct-label neighbor,
/// split by whether the base model tags it correctly. With `exclude_self`
/// the token's own memory entries are skipped.
pub fn rank_distribution<R: Real>(
    model: &Model<R>,
    memory: &ActivationMemory,
    instances: &[Instance],
    k: usize,
    exclude_self: bool,
) -> Result<RankDistribution> {
    let per: Vec<Vec<(Option<usize>, bool)>> = instances
        .par_iter()
        .map(|inst| {
            let gold = model.tags.encode(&inst.gold_tags)?;
            let h = model.encode(inst)?;
            let pred = crate::crf::viterbi_decode(&crate::crf::emission_scores(&h, &model.crf)?, &model.crf)?;
            let ex: Vec<Vec<usize>> = if exclude_self {
                (0..inst.len())
                    .map(|t| memory.ids_for(&inst.sentence_id, t as u32).to_vec())
                    .collect()
            } else {
                Vec::new()
            };
            let sets = knn_query_batch(&h, memory, k, &ex)?;
            Ok(sets
                .iter()
                .zip(gold.iter().zip(&pred))
                .map(|(ns, (&g, &p))| (rank_of_first_correct(ns, g), g == p))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = RankDistribution {
        base_correct: RankHistogram::new(k),
        base_incorrect: RankHistogram::new(k),
    };
    for (rank, ok) in per.into_iter().flatten() {
        if ok {
            out.base_correct.add(rank);
        } else {
            out.base_incorrect.add(rank);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// confusion difference

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionDiff {
    /// Row and column labels, by descending gold frequency.
    pub labels: Vec<String>,
    /// `matrix[gold][pred]` of `confusion(b) − confusion(a)`.
    pub matrix: Vec<Vec<i64>>,
}

impl ConfusionDiff {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("gold\\pred");
        for l in &self.labels {
            s.push('\t');
            s.push_str(l);
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.matrix) {
            s.push_str(l);
            for v in row {
                let _ = write!(s, "\t{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Labels by descending frequency, ties by label text.
fn by_frequency<S: AsRef<str>>(labels: &[S]) -> Vec<String> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for l in labels {
        *freq.entry(l.as_ref()).or_default() += 1;
    }
    let mut v: Vec<(&str, usize)> = freq.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    v.into_iter().map(|(l, _)| l.to_string()).collect()
}

pub fn confusion_diff<S: AsRef<str>>(gold: &[S], a: &[S], b: &[S], top_n: usize) -> Result<ConfusionDiff> {
    if gold.len() != a.len() || gold.len() != b.len() {
        return Err(Error::Input(format!(
            "confusion_diff: lengths {} / {} / {}",
            gold.len(),
            a.len(),
            b.len()
        )));
    }
    let labels: Vec<String> = by_frequency(gold).into_iter().take(top_n).collect();
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let n = labels.len();
    let mut matrix = vec![vec![0i64; n]; n];
    for ((g, pa), pb) in gold.iter().zip(a).zip(b) {
        let Some(&r) = index.get(g.as_ref()) else { continue };
        if let Some(&c) = index.get(pa.as_ref()) {
            matrix[r][c] -= 1;
        }
        if let Some(&c) = index.get(pb.as_ref()) {
            matrix[r][c] += 1;
        }
    }
    Ok(ConfusionDiff { labels, matrix })
}

// ---------------------------------------------------------------------------
// disagreement

/// Scenario index (0-based) of one token: 0 base wrong → PNMA right,
/// 1 both wrong, 2 both right, 3 base right → PNMA wrong.
pub fn scenario(gold: &str, base: &str, pnma: &str) -> usize {
    match (base == gold, pnma == gold) {
        (false, true) => 0,
        (false, false) => 1,
        (true, true) => 2,
        (true, false) => 3,
    }
}

/// Bucket lower bounds; a value belongs to the last bound not above it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketEdges(pub Vec<usize>);

impl BucketEdges {
    /// `0, 1, 2–3, 4–7, …` up to the bucket holding `max`.
    pub fn powers_of_two(max: usize) -> Self {
        let mut edges = vec![0, 1];
        let mut e = 2;
        while e <= max {
            edges.push(e);
            e *= 2;
        }
        BucketEdges(edges)
    }

    pub fn index(&self, v: usize) -> usize {
        self.0.iter().rposition(|&e| e <= v).unwrap_or(0)
    }

    pub fn label(&self, i: usize) -> String {
        let lo = self.0[i];
        match self.0.get(i + 1) {
            Some(&next) if next - 1 == lo => lo.to_string(),
            Some(&next) => format!("{lo}-{}", next - 1),
            None => format!("{lo}+"),
        }
    }
}

pub type ScenarioCounts = [usize; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct DisagreementReport {
    pub scenarios: ScenarioCounts,
    /// `count(1) / count(4)`; `None` stands for infinity (no regressions).
    pub ratio: Option<f64>,
    pub by_predicate_frequency: Vec<(String, ScenarioCounts)>,
    pub by_neighborhood: Vec<(String, ScenarioCounts)>,
}

fn ratio_of(c: &ScenarioCounts) -> Option<f64> {
    (c[3] > 0).then(|| c[0] as f64 / c[3] as f64)
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "inf".to_string(), |v| format!("{v:.6}"))
}

impl DisagreementReport {
    pub fn total(&self) -> usize {
        self.scenarios.iter().sum()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("section\tbucket\tscenario1\tscenario2\tscenario3\tscenario4\tratio\n");
        let mut row = |sec: &str, b: &str, c: &ScenarioCounts| {
            let _ = writeln!(
                s,
                "{sec}\t{b}\t{}\t{}\t{}\t{}\t{}",
                c[0],
                c[1],
                c[2],
                c[3],
                fmt_ratio(ratio_of(c))
            );
        };
        row("all", "*", &self.scenarios);
        for (b, c) in &self.by_predicate_frequency {
            row("predicate_frequency", b, c);
        }
        for (b, c) in &self.by_neighborhood {
            row("neighborhood_same_label", b, c);
        }
        s
    }
}

/// Token-aligned inputs: labels, the training frequency of each token's
/// predicate, and how many of its retrieved neighbors share its gold label.
pub fn disagreement_report<S: AsRef<str>>(
    gold: &[S],
    base: &[S],
    pnma: &[S],
    predicate_frequency: &[usize],
    same_label_neighbors: &[usize],
    frequency_edges: &BucketEdges,
    neighborhood_edges: &BucketEdges,
) -> Result<DisagreementReport> {
    let n = gold.len();
    if [
        base.len(),
        pnma.len(),
        predicate_frequency.len(),
        same_label_neighbors.len(),
    ]
    .iter()
    .any(|&l| l != n)
    {
        return Err(Error::Input("disagreement_report: inputs are not aligned".into()));
    }
    let mut scenarios = [0usize; 4];
    let mut by_f = vec![[0usize; 4]; frequency_edges.0.len()];
    let mut by_n = vec![[0usize; 4]; neighborhood_edges.0.len()];
    for i in 0..n {
        let s = scenario(gold[i].as_ref(), base[i].as_ref(), pnma[i].as_ref());
        scenarios[s] += 1;
        by_f[frequency_edges.index(predicate_frequency[i])][s] += 1;
        by_n[neighborhood_edges.index(same_label_neighbors[i])][s] += 1;
    }
    let label = |edges: &BucketEdges, v: Vec<ScenarioCounts>| {
        v.into_iter()
            .enumerate()
            .map(|(i, c)| (edges.label(i), c))
            .collect::<Vec<_>>()
    };
    Ok(DisagreementReport {
        ratio: ratio_of(&scenarios),
        scenarios,
        by_predicate_frequency: label(frequency_edges, by_f),
        by_neighborhood: label(neighborhood_edges, by_n),
    })
}

/// How often each predicate word occurs as the predicate of a training instance.
pub fn predicate_frequencies(train: &[Instance]) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for inst in train {
        *m.entry(inst.predicate().to_string()).or_default() += 1;
    }
    m
}

// ---------------------------------------------------------------------------
// neighbor dump

#[derive(Clone, Debug, PartialEq)]
pub struct DumpEntry {
    pub rank: usize,
    pub entry_id: usize,
    pub label: String,
    pub distance: f64,
    pub snippet: String,
}

/// `±window` tokens around `token` of `inst`: the predicate is written
/// `[w]`, the argument span holding `token` (or the token alone) `{…}`.
pub fn snippet(inst: &Instance, token: usize, window: usize) -> String {
    let n = inst.len();
    let lo = token.saturating_sub(window);
    let hi = (token + window).min(n - 1);
    let (a, b) = bio_decode_spans(&inst.gold_tags)
        .into_iter()
        .find(|s| s.start <= token && token <= s.end && s.role != PREDICATE_ROLE)
        .map_or((token, token), |s| (s.start, s.end));
    let mut out = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let mut w = inst.tokens[i].clone();
        if i == inst.predicate_index {
            w = format!("[{w}]");
        }
        if i == a.max(lo) {
            w = format!("{{{w}");
        }
        if i == b.min(hi) {
            w.push('}');
        }
        out.push(w);
    }
    out.join(" ")
}

/// The `k` nearest memory entries to token `token` of `query`, with context
/// snippets taken from `sources` (keyed by sentence id).
pub fn neighbor_dump<R: Real>(
    query: &Instance,
    token: usize,
    model: &Model<R>,
    memory: &ActivationMemory,
    k: usize,
    window: usize,
    sources: &HashMap<String, &Instance>,
) -> Result<Vec<DumpEntry>> {
    if token >= query.len() {
        return Err(Error::Dump(format!(
            "token {token} outside sentence {:?} of length {}",
            query.sentence_id,
            query.len()
        )));
    }
    let h = model.encode(query)?;
    let ns = knn_query(h.row(token), memory, k, &[])?;
    ns.items
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let (sid, tok) = memory.provenance(nb.entry_id);
            let src = sources
                .get(sid)
                .ok_or_else(|| Error::Dump(format!("no text for memory sentence {sid:?}")))?;
            if *tok as usize >= src.len() {
                return Err(Error::Dump(format!("memory token {tok} outside sentence {sid:?}")));
            }
            Ok(DumpEntry {
                rank: i + 1,
                entry_id: nb.entry_id,
                label: model.tags.label(nb.gold_label).to_string(),
                distance: nb.distance,
                snippet: snippet(src, *tok as usize, window),
            })
        })
        .collect()
}

pub fn dump_to_tsv(entries: &[DumpEntry]) -> String {
    let mut s = String::from("rank\tentry_id\tlabel\tdistance\tsnippet\n");
    for e in entries {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.6}\t{}",
            e.rank, e.entry_id, e.label, e.distance, e.snippet
        );
    }
    s
}

/// Raw vectors for external projection: per token, one `h` row (encoder
/// output) and one `n` row (neighborhood representation), tagged with the
/// token's scenario (1-based). `base` and `pnma` are flattened predictions.
pub fn vector_export<R: Real>(
    model: &Model<R>,
    memory: &ActivationMemory,
    instances: &[Instance],
    base: &[String],
    pnma: &[String],
) -> Result<String> {
    let total: usize = instances.iter().map(Instance::len).sum();
    if base.len() != total || pnma.len() != total {
        return Err(Error::Input(format!(
            "{} tokens but {} base and {} PNMA predictions",
            total,
            base.len(),
            pnma.len()
        )));
    }
    let traces: Vec<_> = instances
        .par_iter()
        .map(|inst| model.pnma_trace(inst, memory))
        .collect::<Result<_>>()?;
    let mut s = String::from("sentence_id\ttoken\tgold\tscenario\tkind\tvalues\n");
    let mut flat = 0;
    for (inst, tr) in instances.iter().zip(&traces) {
        for t in 0..inst.len() {
            let gold = &inst.gold_tags[t];
            let sc = scenario(gold, &base[flat], &pnma[flat]) + 1;
            for (kind, row) in [("h", tr.h.row(t)), ("n", tr.repr.row(t))] {
                let _ = write!(s, "{}\t{t}\t{gold}\t{sc}\t{kind}", inst.sentence_id);
                for v in row {
                    let _ = write!(s, "\t{}", v.f64() as f32);
                }
                s.push('\n');
            }
            flat += 1;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::Neighbor;

    fn tags(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn span_prf_examples() {
        let g: BTreeSet<Span> = [
            Span::new(0, 1, "A0"),
            Span::new(3, 3, "A1"),
            Span::new(5, 6, "A2"),
            Span::new(8, 8, "AM"),
        ]
        .into_iter()
        .collect();
        let r = span_prf(&g, &g);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = span_prf(&g, &BTreeSet::new());
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        let p: BTreeSet<Span> = [Span::new(0, 1, "A0"), Span::new(3, 3, "A1"), Span::new(5, 5, "A2")]
            .into_iter()
            .collect();
        let r = span_prf(&g, &p);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 0.5).abs() < 1e-15);
        assert!((r.f1 - 4.0 / 7.0).abs() < 1e-15);
        let s = span_prf(&p, &g);
        assert_eq!((s.precision, s.recall), (r.recall, r.precision));
    }

    #[test]
    fn token_accuracy_examples() {
        let g = tags("A0 _ A1 A1 _ A2");
        let r = token_accuracy(&g, &g, "_").unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let none = tags("_ _ _ _ _ _");
        let r = token_accuracy(&g, &none, "_").unwrap();
        assert_eq!((r.precision, r.recall), (0.0, 0.0));
        let p = tags("A0 _ A1 A2 _ _");
        let r = token_accuracy(&g, &p, "_").unwrap();
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 0.5).abs() < 1e-15);
        assert!(token_accuracy(&g, &p[..3], "_").is_err());
    }

    #[test]
    fn bio_scheme_ignores_predicate_span() {
        let g = tags("B-A0 I-A0 B-V B-A1");
        let p = tags("B-A0 I-A0 O B-A1");
        let r = BioSpanScheme.score(&g, &p).unwrap();
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.total.gold, 2);
    }

    fn set(labels: &[u32]) -> NeighborSet {
        NeighborSet {
            items: labels
                .iter()
                .enumerate()
                .map(|(i, &l)| Neighbor {
                    entry_id: i,
                    squared_distance: i as f64,
                    distance: (i as f64).sqrt(),
                    gold_label: l,
                })
                .collect(),
        }
    }

    #[test]
    fn planted_rank_histogram() {
        // 20 tokens: gold label 0, first occurrence of 0 planted at a chosen rank
        let planted = [1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 3, 4, 5, 8, 8, 0, 0, 0, 1];
        let mut h = RankHistogram::new(8);
        for &r in &planted {
            let mut labels = vec![9u32; 8];
            if r > 0 {
                labels[r - 1] = 0;
                if r < 8 {
                    labels[7] = 0;
                }
            }
            h.add(rank_of_first_correct(&set(&labels), 0));
        }
        assert_eq!(h.counts, vec![8, 3, 2, 1, 1, 0, 0, 2, 3]);
        assert_eq!(h.total(), 20);
        assert_eq!(h.absent(), 3);
        assert_eq!(h.median(), Some(2));
        let tsv = h.to_tsv();
        assert!(tsv.starts_with("rank\tnormalized_frequency\n1\t0.400000\n"));
        assert!(tsv.ends_with("absent\t0.150000\n"));
    }

    #[test]
    fn confusion_examples() {
        let g = tags("X X Y Z");
        let same = confusion_diff(&g, &g, &g, 3).unwrap();
        assert!(same.matrix.iter().flatten().all(|&v| v == 0));
        let a = tags("Y X Y Z");
        let d = confusion_diff(&g, &a, &g, 3).unwrap();
        assert_eq!(d.labels, tags("X Y Z"));
        assert_eq!(d.matrix[0][0], 1);
        assert_eq!(d.matrix[0][1], -1);
        assert_eq!(d.matrix.iter().flatten().filter(|&&v| v != 0).count(), 2);
    }

    #[test]
    fn confusion_five_changes() {
        let g = tags("A A A A B B B C C D");
        let a = tags("A B A C B A B C D D");
        let b = tags("A A A A B B C C C A");
        let d = confusion_diff(&g, &a, &b, 3).unwrap();
        // hand count: rows A,B,C; D is outside the top 3
        assert_eq!(d.labels, tags("A B C"));
        assert_eq!(d.matrix, vec![vec![2, -1, -1], vec![-1, 0, 1], vec![0, 0, 1]]);
    }

    #[test]
    fn disagreement_examples() {
        let e = BucketEdges::powers_of_two(8);
        let g = tags("a a a a a a");
        let base = tags("b b b b a a");
        let pnma = tags("a a a a b a");
        let r = disagreement_report(&g, &base, &pnma, &[1, 2, 3, 4, 5, 9], &[0; 6], &e, &e).unwrap();
        assert_eq!(r.scenarios, [4, 0, 1, 1]);
        assert_eq!(r.ratio, Some(4.0));
        assert_eq!(r.total(), 6);
        let r = disagreement_report(&g, &base, &base, &[1; 6], &[0; 6], &e, &e).unwrap();
        assert_eq!((r.scenarios[0], r.scenarios[3]), (0, 0));
        assert_eq!(r.ratio, None);
        assert!(r.to_tsv().lines().nth(1).unwrap().ends_with("\tinf"));
    }

    #[test]
    fn power_of_two_buckets() {
        let e = BucketEdges::powers_of_two(10);
        assert_eq!(e.0, vec![0, 1, 2, 4, 8]);
        assert_eq!(
            (e.index(0), e.index(1), e.index(3), e.index(4), e.index(100)),
            (0, 1, 2, 3, 4)
        );
        assert_eq!(e.label(1), "1");
        assert_eq!(e.label(2), "2-3");
        assert_eq!(e.label(4), "8+");
    }

    #[test]
    fn snippet_marks_and_clamps() {
        let inst = Instance::new(
            "s",
            tags("the cat sat on the mat"),
            2,
            tags("B-A0 I-A0 B-V B-AM I-AM I-AM"),
        )
        .unwrap();
        assert_eq!(snippet(&inst, 0, 5), "{the cat} [sat] on the mat");
        assert_eq!(snippet(&inst, 4, 1), "{on the mat}");
        assert_eq!(snippet(&inst, 1, 0), "{cat}");
        assert_eq!(snippet(&inst, 4, 2), "[sat] {on the mat}");
    }
}
