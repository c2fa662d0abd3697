//! Activation memory: final-layer token representations of a sampled subset
//! of the training tokens, with gold labels and provenance, plus exact K-NN
//! retrieval under Euclidean distance.
//!
//! File layout (`PNMAMEM1`, little-endian):
//!
//! ```text
//! magic "PNMAMEM1"
//! d: u32, count: u64
//! count × { vector: d × f32, label: u32, sentence_id: u32 len + bytes, token_index: u32 }
//! metadata: u32 len + UTF-8 `key=value` lines
//! sha256 of everything above: 32 bytes
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataio::Instance;
use crate::digest::{self, put_str, put_u32, put_u64, Digest, Reader};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::registry::Registry;
use crate::rng::{self, SeededRng};
use crate::tensor::{Real, Tensor};

pub const MEMORY_MAGIC: &[u8; 8] = b"PNMAMEM1";
const MEMORY_MAGIC_PREFIX: &[u8] = b"PNMAMEM";

/// Provenance of a stored activation: `(sentence_id, token_index)`.
pub type Provenance = (String, u32);

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryMeta {
    pub seed: u64,
    pub fraction: f64,
    pub sampler: String,
    pub source_digest: Digest,
}

impl Default for MemoryMeta {
    fn default() -> Self {
        MemoryMeta {
            seed: 0,
            fraction: 1.0,
            sampler: "uniform".into(),
            source_digest: [0u8; 32],
        }
    }
}

impl MemoryMeta {
    fn to_text(&self) -> String {
        format!(
            "seed={}\nfraction={}\nsampler={}\nsource_digest={}\n",
            self.seed,
            self.fraction,
            self.sampler,
            digest::to_hex(&self.source_digest)
        )
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut meta = MemoryMeta::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("memory metadata line {line:?}")))?;
            let bad = || Error::Format(format!("memory metadata value {line:?}"));
            match k {
                "seed" => meta.seed = v.parse().map_err(|_| bad())?,
                "fraction" => meta.fraction = v.parse().map_err(|_| bad())?,
                "sampler" => meta.sampler = v.to_string(),
                "source_digest" => meta.source_digest = digest::from_hex(v).ok_or_else(bad)?,
                _ => return Err(Error::Format(format!("unknown memory metadata key {k:?}"))),
            }
        }
        Ok(meta)
    }
}

/// Borrowed view of one stored entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryEntry<'a> {
    pub entry_id: usize,
    pub vector: &'a [f32],
    pub gold_label: u32,
    pub sentence_id: &'a str,
    pub token_index: u32,
}

/// Immutable once built: there are no mutating methods.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMemory {
    d: usize,
    vectors: Vec<f32>,
    labels: Vec<u32>,
    provenance: Vec<Provenance>,
    meta: MemoryMeta,
    index: HashMap<Provenance, Vec<usize>>,
}

impl ActivationMemory {
    pub fn from_parts(
        d: usize,
        vectors: Vec<f32>,
        labels: Vec<u32>,
        provenance: Vec<Provenance>,
        meta: MemoryMeta,
    ) -> Result<Self> {
        if vectors.len() != d * labels.len() || labels.len() != provenance.len() {
            return Err(Error::dim("activation memory", &[vectors.len()], &[labels.len(), d]));
        }
        let mut index: HashMap<Provenance, Vec<usize>> = HashMap::new();
        for (i, p) in provenance.iter().enumerate() {
            index.entry(p.clone()).or_default().push(i);
        }
        Ok(ActivationMemory {
            d,
            vectors,
            labels,
            provenance,
            meta,
            index,
        })
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn meta(&self) -> &MemoryMeta {
        &self.meta
    }

    pub fn vector(&self, id: usize) -> &[f32] {
        &self.vectors[id * self.d..(id + 1) * self.d]
    }

    pub fn label(&self, id: usize) -> u32 {
        self.labels[id]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn provenance(&self, id: usize) -> &Provenance {
        &self.provenance[id]
    }

    pub fn entry(&self, id: usize) -> MemoryEntry<'_> {
        MemoryEntry {
            entry_id: id,
            vector: self.vector(id),
            gold_label: self.labels[id],
            sentence_id: &self.provenance[id].0,
            token_index: self.provenance[id].1,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = MemoryEntry<'_>> {
        (0..self.len()).map(|i| self.entry(i))
    }

    /// Entry ids stored for a provenance key.
    pub fn ids_for(&self, sentence_id: &str, token_index: u32) -> &[usize] {
        self.index
            .get(&(sentence_id.to_string(), token_index))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// `K × d` matrix of the neighbor vectors, in rank order.
    pub fn neighbor_matrix<R: Real>(&self, neighbors: &NeighborSet) -> Tensor<R> {
        let mut m = Tensor::zeros(&[neighbors.len(), self.d]);
        for (r, n) in neighbors.items.iter().enumerate() {
            for (dst, &src) in m.row_mut(r).iter_mut().zip(self.vector(n.entry_id)) {
                *dst = R::from_f32_bits(src);
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub entry_id: usize,
    pub squared_distance: f64,
    pub distance: f64,
    pub gold_label: u32,
}

/// The `K` nearest entries, ascending by distance (ties: lower entry id first).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct NeighborSet {
    pub items: Vec<Neighbor>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn distances<R: Real>(&self) -> Vec<R> {
        self.items.iter().map(|n| R::of(n.distance)).collect()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.items.iter().map(|n| n.entry_id).collect()
    }
}

/// Chooses which training tokens enter the memory.
pub trait MemorySampler: Send + Sync {
    fn name(&self) -> &'static str;

    /// Ascending global token indices drawn from `labels` (one label per token).
    fn sample(&self, labels: &[u32], fraction: f64, rng: &mut SeededRng) -> Vec<usize>;
}

fn sample_count(total: usize, fraction: f64) -> usize {
    if total == 0 {
        return 0;
    }
    ((total as f64 * fraction).round() as usize).clamp(1, total)
}

/// Uniform sampling without replacement over all tokens.
pub struct UniformSampler;

impl MemorySampler for UniformSampler {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn sample(&self, labels: &[u32], fraction: f64, rng: &mut SeededRng) -> Vec<usize> {
        let count = sample_count(labels.len(), fraction);
        let mut picked = rng::permutation(rng, labels.len());
        picked.truncate(count);
        picked.sort_unstable();
        picked
    }
}

/// Uniform sampling without replacement within each gold label.
pub struct StratifiedSampler;

impl MemorySampler for StratifiedSampler {
    fn name(&self) -> &'static str {
        "stratified"
    }

    fn sample(&self, labels: &[u32], fraction: f64, rng: &mut SeededRng) -> Vec<usize> {
        let mut by_label: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (i, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        let mut picked = Vec::new();
        for members in by_label.values() {
            let count = sample_count(members.len(), fraction);
            let perm = rng::permutation(rng, members.len());
            picked.extend(perm.into_iter().take(count).map(|j| members[j]));
        }
        picked.sort_unstable();
        picked
    }
}

pub fn sampler_registry() -> Registry<dyn MemorySampler> {
    let mut r: Registry<dyn MemorySampler> = Registry::new("memory sampler");
    r.register("uniform", || Box::new(UniformSampler));
    r.register("stratified", || Box::new(StratifiedSampler));
    r
}

/// Encode the training instances (evaluation mode) and store a seeded sample
/// of their token activations.
pub fn build_memory<R: Real>(
    model: &Model<R>,
    instances: &[Instance],
    fraction: f64,
    seed: u64,
    sampler: &dyn MemorySampler,
) -> Result<ActivationMemory> {
    if instances.is_empty() {
        return Err(Error::Build("empty training set".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Build(format!("memory fraction {fraction} outside (0, 1]")));
    }
    let mut labels = Vec::new();
    let mut owner = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let ids = model.tags.encode(&inst.gold_tags)?;
        for (t, id) in ids.into_iter().enumerate() {
            labels.push(id);
            owner.push((i, t));
        }
    }
    let mut rng = rng::seeded(seed, rng::stream::MEMORY);
    let picked = sampler.sample(&labels, fraction, &mut rng);

    let mut needed: Vec<usize> = picked.iter().map(|&g| owner[g].0).collect();
    needed.dedup();
    let encoded: Vec<Tensor<R>> = needed
        .par_iter()
        .map(|&i| model.encode(&instances[i]))
        .collect::<Result<_>>()?;
    let slot: HashMap<usize, usize> = needed.iter().enumerate().map(|(k, &i)| (i, k)).collect();

    let d = model.hidden();
    let mut vectors = Vec::with_capacity(picked.len() * d);
    let mut out_labels = Vec::with_capacity(picked.len());
    let mut provenance = Vec::with_capacity(picked.len());
    for &g in &picked {
        let (i, t) = owner[g];
        let h = &encoded[slot[&i]];
        vectors.extend(h.row(t).iter().map(|v| v.to_f32_lossy()));
        out_labels.push(labels[g]);
        provenance.push((instances[i].sentence_id.clone(), t as u32));
    }
    ActivationMemory::from_parts(
        d,
        vectors,
        out_labels,
        provenance,
        MemoryMeta {
            seed,
            fraction,
            sampler: sampler.name().to_string(),
            source_digest: model.digest(),
        },
    )
}

#[inline]
fn squared_distance(q: &[f64], m: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for (&a, &b) in q.iter().zip(m) {
        let diff = a - b as f64;
        s += diff * diff;
    }
    s
}

const BLOCK: usize = 256;

/// Bounded list of the best `(squared distance, id)` pairs, kept sorted.
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, dist: f64, id: usize) {
        if self.items.len() == self.k {
            let worst = self.items[self.k - 1];
            if dist.total_cmp(&worst.0).then(id.cmp(&worst.1)).is_ge() {
                return;
            }
        }
        let pos = self
            .items
            .partition_point(|&(d, i)| d.total_cmp(&dist).then(i.cmp(&id)).is_lt());
        self.items.insert(pos, (dist, id));
        self.items.truncate(self.k);
    }
}

fn check_capacity(memory: &ActivationMemory, k: usize, excluded: &[usize]) -> Result<()> {
    let available = memory.len() - excluded.len().min(memory.len());
    if k == 0 || k > available {
        return Err(Error::Capacity { k, available });
    }
    Ok(())
}

fn finish(memory: &ActivationMemory, top: TopK) -> NeighborSet {
    NeighborSet {
        items: top
            .items
            .into_iter()
            .map(|(d2, id)| Neighbor {
                entry_id: id,
                squared_distance: d2,
                distance: d2.sqrt(),
                gold_label: memory.label(id),
            })
            .collect(),
    }
}

/// Exact top-K over a block of queries. Memory is scanned in blocks of
/// entries in ascending id order; each pair's distance is an in-order sum so
/// results do not depend on blocking or threading.
fn knn_block(queries: &[Vec<f64>], memory: &ActivationMemory, k: usize, excluded: &[&[usize]]) -> Vec<NeighborSet> {
    let mut tops: Vec<TopK> = queries.iter().map(|_| TopK::new(k)).collect();
    let n = memory.len();
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        for (qi, q) in queries.iter().enumerate() {
            let ex = excluded[qi];
            let top = &mut tops[qi];
            for id in start..end {
                if !ex.is_empty() && ex.contains(&id) {
                    continue;
                }
                top.offer(squared_distance(q, memory.vector(id)), id);
            }
        }
        start = end;
    }
    tops.into_iter().map(|t| finish(memory, t)).collect()
}

fn to_f64<R: Real>(q: &[R], d: usize) -> Result<Vec<f64>> {
    if q.len() != d {
        return Err(Error::dim("knn_query", &[q.len()], &[d]));
    }
    Ok(q.iter().map(|v| v.f64()).collect())
}

/// Entry ids to skip for a set of provenance keys.
pub fn excluded_ids(memory: &ActivationMemory, exclusions: &[Provenance]) -> Vec<usize> {
    let mut ids: Vec<usize> = exclusions
        .iter()
        .flat_map(|(s, t)| memory.ids_for(s, *t).iter().copied())
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

pub fn knn_query<R: Real>(
    query: &[R],
    memory: &ActivationMemory,
    k: usize,
    exclusions: &[Provenance],
) -> Result<NeighborSet> {
    let ex = excluded_ids(memory, exclusions);
    check_capacity(memory, k, &ex)?;
    let q = to_f64(query, memory.width())?;
    Ok(knn_block(&[q], memory, k, &[&ex]).pop().unwrap())
}

/// Batched exact retrieval; row `i` of `queries` is matched with
/// `exclusions[i]` (or no exclusions when `exclusions` is empty).
pub fn knn_query_batch<R: Real>(
    queries: &Tensor<R>,
    memory: &ActivationMemory,
    k: usize,
    exclusions: &[Vec<usize>],
) -> Result<Vec<NeighborSet>> {
    let n = queries.rows();
    if !exclusions.is_empty() && exclusions.len() != n {
        return Err(Error::dim("knn_query_batch", &[exclusions.len()], &[n]));
    }
    let empty: Vec<usize> = Vec::new();
    let ex_of = |i: usize| -> &[usize] {
        if exclusions.is_empty() {
            &empty
        } else {
            &exclusions[i]
        }
    };
    for i in 0..n {
        check_capacity(memory, k, ex_of(i))?;
    }
    let qs: Vec<Vec<f64>> = (0..n)
        .map(|i| to_f64(queries.row(i), memory.width()))
        .collect::<Result<_>>()?;
    const QBLOCK: usize = 16;
    let blocks: Vec<Vec<NeighborSet>> = qs
        .par_chunks(QBLOCK)
        .enumerate()
        .map(|(b, chunk)| {
            let ex: Vec<&[usize]> = (0..chunk.len()).map(|j| ex_of(b * QBLOCK + j)).collect();
            knn_block(chunk, memory, k, &ex)
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

pub fn serialize_memory_bytes(memory: &ActivationMemory) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + memory.vectors.len() * 4 + memory.len() * 16);
    out.extend_from_slice(MEMORY_MAGIC);
    put_u32(&mut out, memory.d as u32);
    put_u64(&mut out, memory.len() as u64);
    for i in 0..memory.len() {
        for &v in memory.vector(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, memory.labels[i]);
        put_str(&mut out, &memory.provenance[i].0);
        put_u32(&mut out, memory.provenance[i].1);
    }
    put_str(&mut out, &memory.meta.to_text());
    let d = digest::sha256(&out);
    out.extend_from_slice(&d);
    out
}

pub fn deserialize_memory_bytes(bytes: &[u8]) -> Result<ActivationMemory> {
    if bytes.len() < 8 || !bytes.starts_with(MEMORY_MAGIC_PREFIX) {
        return Err(Error::Format("not a memory file (bad magic)".into()));
    }
    if &bytes[..8] != MEMORY_MAGIC {
        return Err(Error::Format(format!(
            "memory format version mismatch: {:?}",
            String::from_utf8_lossy(&bytes[..8])
        )));
    }
    let (payload, _) = digest::split_verified(bytes, "memory file")?;
    let mut r = Reader::new(payload, "memory file");
    r.take(8)?;
    let d = r.u32()? as usize;
    let count = r.u64()? as usize;
    // each entry needs at least d*4 + 12 bytes
    if count.saturating_mul(d * 4 + 12) > r.remaining() {
        return Err(Error::Format("memory file truncated: entry table".into()));
    }
    let mut vectors = Vec::with_capacity(count * d);
    let mut labels = Vec::with_capacity(count);
    let mut provenance = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..d {
            vectors.push(r.f32()?);
        }
        labels.push(r.u32()?);
        let sid = r.string()?;
        provenance.push((sid, r.u32()?));
    }
    let meta = MemoryMeta::from_text(&r.string()?)?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "memory file has {} trailing bytes at {}",
            r.remaining(),
            r.pos()
        )));
    }
    ActivationMemory::from_parts(d, vectors, labels, provenance, meta)
}

pub fn serialize_memory(memory: &ActivationMemory, path: &Path) -> Result<()> {
    fs::write(path, serialize_memory_bytes(memory))?;
    Ok(())
}

pub fn deserialize_memory(path: &Path) -> Result<ActivationMemory> {
    deserialize_memory_bytes(&fs::read(path)?)
}
