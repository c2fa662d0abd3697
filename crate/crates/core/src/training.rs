//! Optimizer and the two training phases.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::analysis::{evaluate, EvalReport};
use crate::crf::{crf_log_likelihood, emission_backward, emission_scores, viterbi_decode, CrfParams};
use crate::dataio::{build_tagset, build_vocab, Instance, SchemeKind};
use crate::digest::to_hex;
use crate::encoder::{encode_sequence, encoder_backward, EncoderConfig, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::memory::{knn_query_batch, ActivationMemory, NeighborSet};
use crate::model::{Model, ModelConfig};
use crate::pnma::{neighborhood_backward, neighborhood_repr, NeighborhoodParams, NeighborhoodWeighting};
use crate::rng::{self, stream};
use crate::tensor::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Instances per gradient-accumulation chunk. Fixed so that the reduction
/// order does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Epochs after which the learning rate is halved.
    pub lr_schedule: Vec<usize>,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub k: usize,
    pub memory_fraction: f64,
    pub sampler: String,
    pub weighting: String,
    pub phase2_epochs: usize,
    pub phase2_lr: f64,
    /// Start phase 2 from the phase-1 emission and CRF parameters.
    pub warm_start: bool,
    /// Keep the epoch with the best validation F1 (else the last epoch).
    pub select_best: bool,
    pub dropout_embed: f64,
    pub dropout_lstm: f64,
    pub word_dim: usize,
    pub predicate_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub min_frequency: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        TrainConfig {
            epochs: 100,
            base_lr: 1e-3,
            lr_schedule: vec![50, 75],
            weight_decay: 1e-4,
            batch_size: 32,
            seed: 1,
            clip_norm: 5.0,
            k: crate::pnma::DEFAULT_K,
            memory_fraction: 0.15,
            sampler: "uniform".into(),
            weighting: "distinct".into(),
            phase2_epochs: 20,
            phase2_lr: 4e-4,
            warm_start: true,
            select_best: true,
            dropout_embed: enc.dropout_embed,
            dropout_lstm: enc.dropout_lstm,
            word_dim: enc.word_dim,
            predicate_dim: enc.predicate_dim,
            hidden: enc.hidden,
            layers: enc.layers,
            min_frequency: 2,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

impl TrainConfig {
    /// Every key accepted by [`TrainConfig::set`], in echo order.
    pub const KEYS: &'static [&'static str] = &[
        "epochs",
        "base_lr",
        "lr_schedule",
        "weight_decay",
        "batch_size",
        "seed",
        "clip_norm",
        "k",
        "memory_fraction",
        "sampler",
        "weighting",
        "phase2_epochs",
        "phase2_lr",
        "warm_start",
        "select_best",
        "dropout_embed",
        "dropout_lstm",
        "word_dim",
        "predicate_dim",
        "hidden",
        "layers",
        "min_frequency",
    ];

    /// Assign one field from text. Returns `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        let bad = || Error::Config(format!("invalid value {v:?} for {key}"));
        let int = || v.parse::<usize>().map_err(|_| bad());
        let real = || v.parse::<f64>().map_err(|_| bad());
        match key {
            "epochs" => self.epochs = int()?,
            "base_lr" => self.base_lr = real()?,
            "lr_schedule" => {
                self.lr_schedule = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
                        .collect::<Result<_>>()?
                }
            }
            "weight_decay" => self.weight_decay = real()?,
            "batch_size" => self.batch_size = int()?,
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "clip_norm" => self.clip_norm = real()?,
            "k" => self.k = int()?,
            "memory_fraction" => self.memory_fraction = real()?,
            "sampler" => self.sampler = v.to_string(),
            "weighting" => self.weighting = v.to_string(),
            "phase2_epochs" => self.phase2_epochs = int()?,
            "phase2_lr" => self.phase2_lr = real()?,
            "warm_start" => self.warm_start = parse_bool(v).ok_or_else(bad)?,
            "select_best" => self.select_best = parse_bool(v).ok_or_else(bad)?,
            "dropout_embed" => self.dropout_embed = real()?,
            "dropout_lstm" => self.dropout_lstm = real()?,
            "word_dim" => self.word_dim = int()?,
            "predicate_dim" => self.predicate_dim = int()?,
            "hidden" => self.hidden = int()?,
            "layers" => self.layers = int()?,
            "min_frequency" => self.min_frequency = int()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "epochs" => self.epochs.to_string(),
            "base_lr" => self.base_lr.to_string(),
            "lr_schedule" => self
                .lr_schedule
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "weight_decay" => self.weight_decay.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "k" => self.k.to_string(),
            "memory_fraction" => self.memory_fraction.to_string(),
            "sampler" => self.sampler.clone(),
            "weighting" => self.weighting.clone(),
            "phase2_epochs" => self.phase2_epochs.to_string(),
            "phase2_lr" => self.phase2_lr.to_string(),
            "warm_start" => self.warm_start.to_string(),
            "select_best" => self.select_best.to_string(),
            "dropout_embed" => self.dropout_embed.to_string(),
            "dropout_lstm" => self.dropout_lstm.to_string(),
            "word_dim" => self.word_dim.to_string(),
            "predicate_dim" => self.predicate_dim.to_string(),
            "hidden" => self.hidden.to_string(),
            "layers" => self.layers.to_string(),
            "min_frequency" => self.min_frequency.to_string(),
            _ => return None,
        })
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        Self::KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_lr", self.base_lr),
            ("phase2_lr", self.phase2_lr),
            ("memory_fraction", self.memory_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("weight_decay", self.weight_decay), ("clip_norm", self.clip_norm)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("dropout_embed", self.dropout_embed),
            ("dropout_lstm", self.dropout_lstm),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.memory_fraction > 1.0 {
            return Err(Error::Config(format!(
                "memory_fraction {} exceeds 1",
                self.memory_fraction
            )));
        }
        let sizes = [
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("word_dim", self.word_dim),
            ("predicate_dim", self.predicate_dim),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("min_frequency", self.min_frequency),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.lr_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "lr_schedule must be strictly increasing, got {:?}",
                self.lr_schedule
            )));
        }
        Ok(())
    }

    /// Learning rate for 1-based `epoch`: halved once for every schedule
    /// point the epoch lies strictly after.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = self.lr_schedule.iter().filter(|&&p| epoch > p).count();
        self.base_lr * 0.5f64.powi(halvings as i32)
    }

    pub fn model_config(&self, scheme: SchemeKind, external_dim: Option<usize>) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                vocab_size: 0,
                word_dim: self.word_dim,
                predicate_dim: self.predicate_dim,
                hidden: self.hidden,
                layers: self.layers,
                external_dim,
                dropout_embed: self.dropout_embed,
                dropout_lstm: self.dropout_lstm,
            },
            k: self.k,
            weighting: self.weighting.clone(),
            scheme,
        }
    }
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Clone, Debug)]
pub struct AdamState<R> {
    pub m: Vec<Vec<R>>,
    pub v: Vec<Vec<R>>,
    pub t: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new(params: &[&Tensor<R>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![R::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![R::zero(); p.len()]).collect(),
            t: 0,
        }
    }
}

/// One Adam update with bias correction. Weight decay is added to the
/// gradient (`g + λθ`) before the moment updates.
pub fn adam_step<R: Real>(
    params: &mut [&mut Tensor<R>],
    grads: &[&Tensor<R>],
    state: &mut AdamState<R>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim("adam_step", &[params.len()], &[grads.len(), state.m.len()]));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.len() != m.len() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = R::of(1.0 / (1.0 - ADAM_BETA1.powi(t)));
    let c2 = R::of(1.0 / (1.0 - ADAM_BETA2.powi(t)));
    let (b1, b2) = (R::of(ADAM_BETA1), R::of(ADAM_BETA2));
    let (one, eps, lr, wd) = (R::one(), R::of(ADAM_EPSILON), R::of(lr), R::of(weight_decay));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gj + wd * *theta;
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let mh = m[j] * c1;
            let vh = v[j] * c2;
            *theta -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale `grads` so that their joint L2 norm is at most `max_norm`
/// (no-op for `max_norm == 0`). Returns the norm before clipping.
pub fn clip_global_norm<R: Real>(grads: &mut [&mut Tensor<R>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = R::of(max_norm / norm);
        grads.iter_mut().for_each(|g| g.scale(s));
    }
    norm
}

// ---------------------------------------------------------------------------
// logs and outcomes

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid: Option<EvalReport>,
}

impl fmt::Display for EpochLog {
    /// `epoch  lr  train_loss  P  R  F1`, tab-separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{:.6}", self.epoch, self.lr, self.train_loss)?;
        match &self.valid {
            Some(r) => write!(f, "\t{:.6}\t{:.6}\t{:.6}", r.precision, r.recall, r.f1),
            None => write!(f, "\t-\t-\t-"),
        }
    }
}

pub const LOG_HEADER: &str = "epoch\tlr\ttrain_loss\tP\tR\tF1";

#[derive(Clone, Debug)]
pub struct TrainOutcome<R> {
    pub model: Model<R>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct PnmaOutcome<R> {
    pub model: Model<R>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Whole phase-2 wall time, including the one-off retrieval pass.
    pub wall_secs: f64,
    pub retrieval_secs: f64,
    pub retrieved_tokens: usize,
}

impl<R> PnmaOutcome<R> {
    pub fn retrieval_secs_per_token(&self) -> f64 {
        if self.retrieved_tokens == 0 {
            0.0
        } else {
            self.retrieval_secs / self.retrieved_tokens as f64
        }
    }
}

/// Decoded tag strings for every instance, PNMA when possible, else base.
pub fn predict_corpus<R: Real>(
    model: &Model<R>,
    memory: Option<&ActivationMemory>,
    instances: &[Instance],
) -> Result<Vec<Vec<String>>> {
    instances
        .par_iter()
        .map(|inst| Ok(model.tags.decode(&model.predict(inst, memory)?)))
        .collect()
}

fn gold_ids<R: Real>(model: &Model<R>, instances: &[Instance]) -> Result<Vec<Vec<u32>>> {
    instances.iter().map(|i| model.tags.encode(&i.gold_tags)).collect()
}

/// Whether an epoch scoring `candidate` replaces the kept model. Without
/// validation scores (or selection) the latest epoch wins.
fn replaces(select_best: bool, best: Option<f64>, candidate: Option<f64>) -> bool {
    match (best, candidate) {
        (Some(b), Some(c)) if select_best => c > b,
        _ => true,
    }
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

// ---------------------------------------------------------------------------
// phase 1

struct BaseGrads<R> {
    loss: f64,
    encoder: EncoderParams<R>,
    crf: CrfParams<R>,
}

impl<R: Real> BaseGrads<R> {
    fn zeros(model: &Model<R>) -> Self {
        BaseGrads {
            loss: 0.0,
            encoder: EncoderParams::zeros(&model.config.encoder),
            crf: CrfParams::zeros(model.tags.len(), model.hidden()),
        }
    }

    fn add(&mut self, other: &BaseGrads<R>) {
        self.loss += other.loss;
        for (a, b) in self.encoder.tensors_mut().into_iter().zip(other.encoder.named()) {
            crate::tensor::axpy(R::one(), b.1.data(), a.data_mut());
        }
        for (a, b) in self.crf.tensors_mut().into_iter().zip(other.crf.named()) {
            crate::tensor::axpy(R::one(), b.1.data(), a.data_mut());
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.crf.tensors_mut());
        v
    }
}

/// Negative log-likelihood of one instance, accumulating its gradient into `acc`.
fn base_instance_grad<R: Real>(
    model: &Model<R>,
    inst: &Instance,
    gold: &[u32],
    rng: &mut rng::SeededRng,
    acc: &mut BaseGrads<R>,
) -> Result<()> {
    let input = model.input(inst);
    let encoded = encode_sequence(&input, &model.encoder, Mode::Train(rng))?;
    let em = emission_scores(&encoded.h_last, &model.crf)?;
    let ll = crf_log_likelihood(&em, gold, &model.crf)?;
    acc.loss -= ll.log_likelihood.f64();
    let mut d_em = ll.grad_emissions;
    d_em.scale(-R::one());
    let neg = -R::one();
    crate::tensor::axpy(neg, ll.grad_params.transitions.data(), acc.crf.transitions.data_mut());
    crate::tensor::axpy(neg, ll.grad_params.start.data(), acc.crf.start.data_mut());
    crate::tensor::axpy(neg, ll.grad_params.stop.data(), acc.crf.stop.data_mut());
    let dh = emission_backward(&encoded.h_last, &model.crf, &d_em, &mut acc.crf);
    let g = encoder_backward(&input, &model.encoder, &encoded, &dh)?;
    g.accumulate_into(&mut acc.encoder);
    Ok(())
}

fn model_params<R: Real>(model: &mut Model<R>) -> Vec<&mut Tensor<R>> {
    let mut v = model.encoder.tensors_mut();
    v.extend(model.crf.tensors_mut());
    v
}

fn external_dim(train: &[Instance]) -> Result<Option<usize>> {
    let dim = train[0].external.as_ref().map(|t| t.cols());
    if train.iter().any(|i| i.external.as_ref().map(|t| t.cols()) != dim) {
        return Err(Error::Input(
            "external embeddings must be attached to all training instances or none".into(),
        ));
    }
    Ok(dim)
}

/// Phase 1: end-to-end training of encoder, emission and CRF layers.
/// `progress` sees every epoch's log line as it is produced.
pub fn train_base<R: Real>(
    train: &[Instance],
    valid: &[Instance],
    config: &TrainConfig,
    scheme: SchemeKind,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<R>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let vocab = build_vocab(train, config.min_frequency);
    let tags = build_tagset(train);
    let mut model: Model<R> = Model::new(
        config.model_config(scheme, external_dim(train)?),
        vocab,
        tags,
        config.seed,
    );
    model.echo = config.entries();
    model.echo.push(("phase".into(), "base".into()));
    let gold = gold_ids(&model, train)?;

    let shapes: Vec<Tensor<R>> = model.named().into_iter().map(|(_, t)| t.clone()).collect();
    let mut adam = AdamState::new(&shapes.iter().collect::<Vec<_>>());
    let mut shuffle = rng::seeded(config.seed, stream::SHUFFLE);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model<R>)> = None;

    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        let order = rng::permutation(&mut shuffle, train.len());
        let mut epoch_loss = 0.0;
        for (b, batch) in batches(&order, config.batch_size).enumerate() {
            let offset = b * config.batch_size;
            let partial: Vec<BaseGrads<R>> = batch
                .par_chunks(GRAD_CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut acc = BaseGrads::zeros(&model);
                    for (j, &i) in chunk.iter().enumerate() {
                        let pos = (offset + c * GRAD_CHUNK + j) as u64;
                        let mut r = rng::seeded(rng::derive(config.seed, &[epoch as u64, pos]), stream::DROPOUT);
                        base_instance_grad(&model, &train[i], &gold[i], &mut r, &mut acc)?;
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;
            let mut total = BaseGrads::zeros(&model);
            partial.iter().for_each(|p| total.add(p));
            if !total.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    value: total.loss,
                });
            }
            epoch_loss += total.loss;
            let mut grads = total.tensors_mut();
            let inv = R::of(1.0 / batch.len() as f64);
            grads.iter_mut().for_each(|g| g.scale(inv));
            clip_global_norm(&mut grads, config.clip_norm);
            let grads: Vec<&Tensor<R>> = grads.into_iter().map(|g| &*g).collect();
            adam_step(
                &mut model_params(&mut model),
                &grads,
                &mut adam,
                lr,
                config.weight_decay,
            )?;
        }
        let report = if valid.is_empty() {
            None
        } else {
            Some(evaluate(scheme, valid, &predict_corpus(&model, None, valid)?)?)
        };
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: epoch_loss / train.len() as f64,
            valid: report,
        };
        progress(&entry);
        let f1 = entry.valid.as_ref().map(|r| r.f1);
        if replaces(config.select_best, best.as_ref().map(|b| b.0), f1) {
            best = Some((f1.unwrap_or(f64::NEG_INFINITY), epoch, model.clone()));
        }
        log.push(entry);
    }
    let (_, best_epoch, mut model) = best.ok_or_else(|| Error::Config("epochs must be positive".into()))?;
    model.echo.push(("best_epoch".into(), best_epoch.to_string()));
    Ok(TrainOutcome { model, log, best_epoch })
}

// ---------------------------------------------------------------------------
// phase 2

/// Frozen-encoder inputs of one instance: activations and retrieved neighbors.
struct Prepared<R> {
    h: Tensor<R>,
    neighbors: Vec<NeighborSet>,
}

fn prepare<R: Real>(
    model: &Model<R>,
    memory: &ActivationMemory,
    instances: &[Instance],
    k: usize,
    exclude_self: bool,
) -> Result<(Vec<Prepared<R>>, f64)> {
    let hs: Vec<Tensor<R>> = instances.par_iter().map(|i| model.encode(i)).collect::<Result<_>>()?;
    let start = Instant::now();
    let sets: Vec<Vec<NeighborSet>> = instances
        .par_iter()
        .zip(&hs)
        .map(|(inst, h)| {
            let ex: Vec<Vec<usize>> = if exclude_self {
                (0..inst.len())
                    .map(|t| memory.ids_for(&inst.sentence_id, t as u32).to_vec())
                    .collect()
            } else {
                Vec::new()
            };
            knn_query_batch(h, memory, k, &ex)
        })
        .collect::<Result<_>>()?;
    let secs = start.elapsed().as_secs_f64();
    let prepared = hs
        .into_iter()
        .zip(sets)
        .map(|(h, neighbors)| Prepared { h, neighbors })
        .collect();
    Ok((prepared, secs))
}

/// Per-token neighbor matrices, distances, weights and the aggregated rows.
struct Aggregated<R> {
    repr: Tensor<R>,
    m: Vec<Tensor<R>>,
    dist: Vec<Vec<R>>,
    eta: Vec<Vec<R>>,
}

fn aggregate<R: Real>(
    p: &Prepared<R>,
    memory: &ActivationMemory,
    params: &NeighborhoodParams<R>,
    weighting: &dyn NeighborhoodWeighting<R>,
) -> Result<Aggregated<R>> {
    let n = p.h.rows();
    let mut out = Aggregated {
        repr: Tensor::zeros(p.h.shape()),
        m: Vec::with_capacity(n),
        dist: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
    };
    for (t, ns) in p.neighbors.iter().enumerate() {
        let m = memory.neighbor_matrix::<R>(ns);
        let dist = ns.distances::<R>();
        let (nk, eta) = neighborhood_repr(p.h.row(t), &m, &dist, params, weighting)?;
        out.repr.row_mut(t).copy_from_slice(&nk);
        out.m.push(m);
        out.dist.push(dist);
        out.eta.push(eta);
    }
    Ok(out)
}

struct PnmaGrads<R> {
    loss: f64,
    neighbors: Tensor<R>,
    crf: CrfParams<R>,
}

impl<R: Real> PnmaGrads<R> {
    fn zeros(model: &Model<R>, rows: usize) -> Self {
        PnmaGrads {
            loss: 0.0,
            neighbors: Tensor::zeros(&[rows, model.hidden()]),
            crf: CrfParams::zeros(model.tags.len(), model.hidden()),
        }
    }

    fn add(&mut self, other: &PnmaGrads<R>) {
        self.loss += other.loss;
        crate::tensor::axpy(R::one(), other.neighbors.data(), self.neighbors.data_mut());
        for (a, b) in self.crf.tensors_mut().into_iter().zip(other.crf.named()) {
            crate::tensor::axpy(R::one(), b.1.data(), a.data_mut());
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        let mut v = vec![&mut self.neighbors];
        v.extend(self.crf.tensors_mut());
        v
    }
}

fn pnma_instance_grad<R: Real>(
    model: &Model<R>,
    memory: &ActivationMemory,
    weighting: &dyn NeighborhoodWeighting<R>,
    p: &Prepared<R>,
    gold: &[u32],
    acc: &mut PnmaGrads<R>,
) -> Result<()> {
    let params = model.neighborhood_params()?;
    let agg = aggregate(p, memory, params, weighting)?;
    let em = emission_scores(&agg.repr, &model.crf)?;
    let ll = crf_log_likelihood(&em, gold, &model.crf)?;
    acc.loss -= ll.log_likelihood.f64();
    let mut d_em = ll.grad_emissions;
    d_em.scale(-R::one());
    let neg = -R::one();
    crate::tensor::axpy(neg, ll.grad_params.transitions.data(), acc.crf.transitions.data_mut());
    crate::tensor::axpy(neg, ll.grad_params.start.data(), acc.crf.start.data_mut());
    crate::tensor::axpy(neg, ll.grad_params.stop.data(), acc.crf.stop.data_mut());
    let d_repr = emission_backward(&agg.repr, &model.crf, &d_em, &mut acc.crf);
    for t in 0..p.h.rows() {
        let g = neighborhood_backward(
            p.h.row(t),
            &agg.m[t],
            &agg.dist[t],
            params,
            weighting,
            &agg.eta[t],
            d_repr.row(t),
        );
        crate::tensor::axpy(R::one(), g.params.data(), acc.neighbors.data_mut());
    }
    Ok(())
}

fn decode_prepared<R: Real>(
    model: &Model<R>,
    memory: &ActivationMemory,
    weighting: &dyn NeighborhoodWeighting<R>,
    prepared: &[Prepared<R>],
) -> Result<Vec<Vec<String>>> {
    let params = model.neighborhood_params()?;
    prepared
        .par_iter()
        .map(|p| {
            let agg = aggregate(p, memory, params, weighting)?;
            let path = viterbi_decode(&emission_scores(&agg.repr, &model.crf)?, &model.crf)?;
            Ok(model.tags.decode(&path))
        })
        .collect()
}

/// Phase 2: with the encoder frozen, train the neighborhood parameters and
/// the emission and CRF layers on `n_K` at a constant learning rate. Each
/// training token's own memory entries are excluded from its neighborhood.
pub fn train_pnma<R: Real>(
    base: &Model<R>,
    memory: &ActivationMemory,
    train: &[Instance],
    valid: &[Instance],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<PnmaOutcome<R>> {
    let started = Instant::now();
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if base.neighborhood.is_some() {
        return Err(Error::Compatibility("phase 2 needs a phase-1 checkpoint".into()));
    }
    base.check_memory(memory)?;
    let digest = base.digest();
    let mut model = base.clone();
    model.config.k = config.k;
    model.config.weighting = config.weighting.clone();
    let weighting = model.weighting()?;
    let rows = weighting.param_rows(config.k);
    let mut init = rng::seeded(config.seed, stream::NEIGHBORHOOD);
    model.neighborhood = Some(NeighborhoodParams::init(config.k, rows, model.hidden(), &mut init));
    if !config.warm_start {
        model.crf = CrfParams::init(model.tags.len(), model.hidden(), &mut init);
    }
    model.echo = config.entries();
    model.echo.push(("phase".into(), "pnma".into()));
    model.echo.push(("base_digest".into(), to_hex(&digest)));

    let gold = gold_ids(&model, train)?;
    let (prep_train, secs_train) = prepare(&model, memory, train, config.k, true)?;
    let (prep_valid, secs_valid) = prepare(&model, memory, valid, config.k, false)?;
    let retrieval_secs = secs_train + secs_valid;
    let retrieved_tokens: usize = train.iter().chain(valid).map(Instance::len).sum();

    let mut trainable: Vec<Tensor<R>> = vec![model.neighborhood_params()?.vectors.clone()];
    trainable.extend(model.crf.named().into_iter().map(|(_, t)| t.clone()));
    let mut adam = AdamState::new(&trainable.iter().collect::<Vec<_>>());
    let mut shuffle = rng::seeded(config.seed, stream::PHASE2_SHUFFLE);
    let mut log = Vec::with_capacity(config.phase2_epochs);
    let mut best: Option<(f64, usize, Model<R>)> = None;
    let lr = config.phase2_lr;

    for epoch in 1..=config.phase2_epochs {
        let order = rng::permutation(&mut shuffle, train.len());
        let mut epoch_loss = 0.0;
        for (b, batch) in batches(&order, config.batch_size).enumerate() {
            let partial: Vec<PnmaGrads<R>> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut acc = PnmaGrads::zeros(&model, rows);
                    for &i in chunk {
                        pnma_instance_grad(&model, memory, weighting.as_ref(), &prep_train[i], &gold[i], &mut acc)?;
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;
            let mut total = PnmaGrads::zeros(&model, rows);
            partial.iter().for_each(|p| total.add(p));
            if !total.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    value: total.loss,
                });
            }
            epoch_loss += total.loss;
            let mut grads = total.tensors_mut();
            let inv = R::of(1.0 / batch.len() as f64);
            grads.iter_mut().for_each(|g| g.scale(inv));
            clip_global_norm(&mut grads, config.clip_norm);
            let grads: Vec<&Tensor<R>> = grads.into_iter().map(|g| &*g).collect();
            let nb = model.neighborhood.as_mut().expect("initialized above");
            let mut params = vec![&mut nb.vectors];
            params.extend(model.crf.tensors_mut());
            adam_step(&mut params, &grads, &mut adam, lr, config.weight_decay)?;
        }
        let report = if valid.is_empty() {
            None
        } else {
            let pred = decode_prepared(&model, memory, weighting.as_ref(), &prep_valid)?;
            Some(evaluate(model.config.scheme, valid, &pred)?)
        };
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: epoch_loss / train.len() as f64,
            valid: report,
        };
        progress(&entry);
        let f1 = entry.valid.as_ref().map(|r| r.f1);
        if replaces(config.select_best, best.as_ref().map(|b| b.0), f1) {
            best = Some((f1.unwrap_or(f64::NEG_INFINITY), epoch, model.clone()));
        }
        log.push(entry);
    }
    let (_, best_epoch, mut model) = best.ok_or_else(|| Error::Config("phase2_epochs must be positive".into()))?;
    model.echo.push(("best_epoch".into(), best_epoch.to_string()));
    Ok(PnmaOutcome {
        model,
        log,
        best_epoch,
        wall_secs: started.elapsed().as_secs_f64(),
        retrieval_secs,
        retrieved_tokens,
    })
}
