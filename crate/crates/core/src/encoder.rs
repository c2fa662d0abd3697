//! Word + predicate-bit embeddings feeding a stack of alternating-direction
//! LSTM layers joined by ReLU connection layers.
//!
//! Layer `l` (0-based) runs forward when `l` is even and backward when odd.
//! Between consecutive LSTM layers the next input is
//! `ReLU(W_l [h_l; x_l])`; the last LSTM output is the token representation.
//! Gate order inside the packed LSTM matrices is input, forget, cell, output.

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::tensor::{axpy, dot, matvec_acc, matvec_t_acc, outer_acc, Real, Tensor};

use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn of_layer(layer: usize) -> Self {
        if layer.is_multiple_of(2) {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub word_dim: usize,
    pub predicate_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// When set, token vectors come from precomputed embeddings of this width
    /// instead of the word table.
    pub external_dim: Option<usize>,
    pub dropout_embed: f64,
    pub dropout_lstm: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 2,
            word_dim: 64,
            predicate_dim: 50,
            hidden: 300,
            layers: 4,
            external_dim: None,
            dropout_embed: 0.5,
            dropout_lstm: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn token_dim(&self) -> usize {
        self.external_dim.unwrap_or(self.word_dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.token_dim() + self.predicate_dim
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed_dim()
        } else {
            self.hidden
        }
    }

    pub fn directions(&self) -> Vec<Direction> {
        (0..self.layers).map(Direction::of_layer).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights<R = f32> {
    /// `4d × d_in`
    pub w_input: Tensor<R>,
    /// `4d × d`
    pub w_recurrent: Tensor<R>,
    /// `4d`
    pub bias: Tensor<R>,
}

impl<R: Real> LstmWeights<R> {
    pub fn zeros(d_in: usize, d: usize) -> Self {
        LstmWeights {
            w_input: Tensor::zeros(&[4 * d, d_in]),
            w_recurrent: Tensor::zeros(&[4 * d, d]),
            bias: Tensor::zeros(&[4 * d]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<R = f32> {
    pub config: EncoderConfig,
    /// `V × d_word`; `0 × d_word` when external embeddings are used.
    pub word_embedding: Tensor<R>,
    /// `2 × d_pred`
    pub predicate_embedding: Tensor<R>,
    pub lstm: Vec<LstmWeights<R>>,
    /// `W_l`: `d × (d + d_in_l)` for `l = 0..L-1`.
    pub connections: Vec<Tensor<R>>,
}

impl<R: Real> EncoderParams<R> {
    pub fn zeros(config: &EncoderConfig) -> Self {
        let vocab = if config.external_dim.is_some() {
            0
        } else {
            config.vocab_size
        };
        let d = config.hidden;
        EncoderParams {
            word_embedding: Tensor::zeros(&[vocab, config.word_dim]),
            predicate_embedding: Tensor::zeros(&[2, config.predicate_dim]),
            lstm: (0..config.layers)
                .map(|l| LstmWeights::zeros(config.layer_input_dim(l), d))
                .collect(),
            connections: (0..config.layers.saturating_sub(1))
                .map(|l| Tensor::zeros(&[d, d + config.layer_input_dim(l)]))
                .collect(),
            config: config.clone(),
        }
    }

    /// Uniform(±1/√fan_in) matrices, N(0, 0.1) embeddings, forget bias 1.
    pub fn init(config: &EncoderConfig, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(config);
        let d = config.hidden;
        p.word_embedding = rng::normal(rng, p.word_embedding.shape(), 0.1);
        p.predicate_embedding = rng::normal(rng, p.predicate_embedding.shape(), 0.1);
        for (l, layer) in p.lstm.iter_mut().enumerate() {
            let d_in = config.layer_input_dim(l);
            layer.w_input = rng::uniform(rng, &[4 * d, d_in], 1.0 / (d_in as f64).sqrt());
            layer.w_recurrent = rng::uniform(rng, &[4 * d, d], 1.0 / (d as f64).sqrt());
            let mut b = Tensor::zeros(&[4 * d]);
            b.data_mut()[d..2 * d].iter_mut().for_each(|v| *v = R::one());
            layer.bias = b;
        }
        for w in p.connections.iter_mut() {
            let fan_in = w.cols();
            *w = rng::uniform(rng, w.shape(), 1.0 / (fan_in as f64).sqrt());
        }
        p
    }

    pub fn named(&self) -> Vec<(String, &Tensor<R>)> {
        let mut out = vec![
            ("encoder.word_embedding".to_string(), &self.word_embedding),
            ("encoder.predicate_embedding".to_string(), &self.predicate_embedding),
        ];
        for (l, w) in self.lstm.iter().enumerate() {
            out.push((format!("encoder.lstm.{l}.w_input"), &w.w_input));
            out.push((format!("encoder.lstm.{l}.w_recurrent"), &w.w_recurrent));
            out.push((format!("encoder.lstm.{l}.bias"), &w.bias));
        }
        for (l, w) in self.connections.iter().enumerate() {
            out.push((format!("encoder.connection.{l}"), w));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        let mut out = vec![&mut self.word_embedding, &mut self.predicate_embedding];
        for w in self.lstm.iter_mut() {
            out.push(&mut w.w_input);
            out.push(&mut w.w_recurrent);
            out.push(&mut w.bias);
        }
        for w in self.connections.iter_mut() {
            out.push(w);
        }
        out
    }
}

/// One encoder input row source: word ids (or external vectors) plus predicate bits.
#[derive(Clone, Debug)]
pub struct EncoderInput<'a> {
    pub word_ids: Vec<u32>,
    pub predicate_bits: &'a [u8],
    pub external: Option<&'a Tensor<f32>>,
}

impl EncoderInput<'_> {
    pub fn len(&self) -> usize {
        self.predicate_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicate_bits.is_empty()
    }
}

/// `x_1^i = [e_i; p_i]`, before any dropout.
pub fn embed_tokens<R: Real>(input: &EncoderInput<'_>, params: &EncoderParams<R>) -> Result<Tensor<R>> {
    let cfg = &params.config;
    let n = input.len();
    let tok = cfg.token_dim();
    let width = cfg.embed_dim();
    let mut out = Tensor::zeros(&[n, width]);
    for i in 0..n {
        let row = out.row_mut(i);
        match (cfg.external_dim, input.external) {
            (Some(d), Some(ext)) => {
                if ext.shape() != [n, d] {
                    return Err(Error::dim("embed_tokens", ext.shape(), &[n, d]));
                }
                for (dst, &src) in row[..tok].iter_mut().zip(ext.row(i)) {
                    *dst = R::from_f32_bits(src);
                }
            }
            (Some(_), None) => {
                return Err(Error::Lookup(
                    "model expects precomputed embeddings but the instance has none".into(),
                ))
            }
            (None, _) => {
                let id = *input
                    .word_ids
                    .get(i)
                    .ok_or_else(|| Error::dim("embed_tokens", &[input.word_ids.len()], &[n]))?
                    as usize;
                if id >= params.word_embedding.rows() {
                    return Err(Error::Lookup(format!(
                        "word id {id} outside table of {} rows",
                        params.word_embedding.rows()
                    )));
                }
                row[..tok].copy_from_slice(params.word_embedding.row(id));
            }
        }
        let bit = input.predicate_bits[i] as usize;
        if bit > 1 {
            return Err(Error::Lookup(format!("predicate bit {bit} at token {i}")));
        }
        row[tok..].copy_from_slice(params.predicate_embedding.row(bit));
    }
    Ok(out)
}

/// Cached activations of one LSTM layer, indexed by token position.
#[derive(Clone, Debug)]
pub struct LstmCache<R> {
    direction: Direction,
    /// post-nonlinearity gates `[i f g o]` per position, `n × 4d`
    gates: Tensor<R>,
    /// cell state per position, `n × d`
    cells: Tensor<R>,
    /// output per position, `n × d`
    hidden: Tensor<R>,
}

fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

fn order(n: usize, direction: Direction) -> Vec<usize> {
    match direction {
        Direction::Forward => (0..n).collect(),
        Direction::Backward => (0..n).rev().collect(),
    }
}

pub fn lstm_layer_forward<R: Real>(x: &Tensor<R>, direction: Direction, weights: &LstmWeights<R>) -> Result<Tensor<R>> {
    Ok(lstm_forward_cached(x, direction, weights)?.hidden)
}

fn lstm_forward_cached<R: Real>(x: &Tensor<R>, direction: Direction, w: &LstmWeights<R>) -> Result<LstmCache<R>> {
    let d = w.hidden();
    if x.shape().len() != 2 || x.cols() != w.input_dim() {
        return Err(Error::dim("lstm_layer_forward", x.shape(), w.w_input.shape()));
    }
    let n = x.rows();
    let mut gates = Tensor::zeros(&[n, 4 * d]);
    let mut cells = Tensor::zeros(&[n, d]);
    let mut hidden = Tensor::zeros(&[n, d]);
    let zeros = vec![R::zero(); d];
    let mut prev: Option<usize> = None;
    let mut z = vec![R::zero(); 4 * d];
    for t in order(n, direction) {
        z.copy_from_slice(w.bias.data());
        matvec_acc(w.w_input.data(), x.row(t), &mut z);
        let (h_prev, c_prev) = match prev {
            Some(p) => (hidden.row(p).to_vec(), cells.row(p).to_vec()),
            None => (zeros.clone(), zeros.clone()),
        };
        matvec_acc(w.w_recurrent.data(), &h_prev, &mut z);
        let g = gates.row_mut(t);
        for k in 0..d {
            g[k] = sigmoid(z[k]);
            g[d + k] = sigmoid(z[d + k]);
            g[2 * d + k] = z[2 * d + k].tanh();
            g[3 * d + k] = sigmoid(z[3 * d + k]);
        }
        let g = gates.row(t).to_vec();
        let c = cells.row_mut(t);
        for k in 0..d {
            c[k] = g[d + k] * c_prev[k] + g[k] * g[2 * d + k];
        }
        let c = cells.row(t).to_vec();
        let h = hidden.row_mut(t);
        for k in 0..d {
            h[k] = g[3 * d + k] * c[k].tanh();
        }
        prev = Some(t);
    }
    Ok(LstmCache {
        direction,
        gates,
        cells,
        hidden,
    })
}

/// Backpropagation through time. Accumulates weight gradients into `grad`
/// and returns `∂loss/∂x`.
fn lstm_backward<R: Real>(
    x: &Tensor<R>,
    cache: &LstmCache<R>,
    w: &LstmWeights<R>,
    dh_out: &Tensor<R>,
    grad: &mut LstmWeights<R>,
) -> Tensor<R> {
    let d = w.hidden();
    let n = x.rows();
    let mut dx = Tensor::zeros(x.shape());
    let mut dh_next = vec![R::zero(); d];
    let mut dc_next = vec![R::zero(); d];
    let mut dz = vec![R::zero(); 4 * d];
    let steps = order(n, cache.direction);
    for (s, &t) in steps.iter().enumerate().rev() {
        let prev = if s == 0 { None } else { Some(steps[s - 1]) };
        let g = cache.gates.row(t);
        let c = cache.cells.row(t);
        let dh = dh_out.row(t);
        for k in 0..d {
            let (i, f, gg, o) = (g[k], g[d + k], g[2 * d + k], g[3 * d + k]);
            let tc = c[k].tanh();
            let dht = dh[k] + dh_next[k];
            let dc = dht * o * (R::one() - tc * tc) + dc_next[k];
            let c_prev = prev.map_or(R::zero(), |p| cache.cells.at(p, k));
            dz[k] = dc * gg * i * (R::one() - i);
            dz[d + k] = dc * c_prev * f * (R::one() - f);
            dz[2 * d + k] = dc * i * (R::one() - gg * gg);
            dz[3 * d + k] = dht * tc * o * (R::one() - o);
            dc_next[k] = dc * f;
        }
        axpy(R::one(), &dz, grad.bias.data_mut());
        outer_acc(&dz, x.row(t), grad.w_input.data_mut());
        matvec_t_acc(w.w_input.data(), &dz, dx.row_mut(t));
        dh_next.iter_mut().for_each(|v| *v = R::zero());
        if let Some(p) = prev {
            outer_acc(&dz, cache.hidden.row(p), grad.w_recurrent.data_mut());
            matvec_t_acc(w.w_recurrent.data(), &dz, &mut dh_next);
        }
    }
    dx
}

/// `ReLU(W [h; x])` with no bias term.
pub fn connection_forward<R: Real>(h: &[R], x: &[R], w: &Tensor<R>) -> Result<Vec<R>> {
    if w.shape().len() != 2 || w.cols() != h.len() + x.len() {
        return Err(Error::dim("connection_forward", w.shape(), &[h.len() + x.len()]));
    }
    let cols = w.cols();
    Ok((0..w.rows())
        .map(|j| {
            let row = &w.data()[j * cols..(j + 1) * cols];
            let pre = dot(&row[..h.len()], h) + dot(&row[h.len()..], x);
            pre.max(R::zero())
        })
        .collect())
}

/// Gradients of [`connection_forward`] given the upstream gradient `dy`.
/// Returns `(∂h, ∂x)` and accumulates `∂W` into `dw`.
pub fn connection_backward<R: Real>(
    h: &[R],
    x: &[R],
    w: &Tensor<R>,
    y: &[R],
    dy: &[R],
    dw: &mut Tensor<R>,
) -> (Vec<R>, Vec<R>) {
    let dpre: Vec<R> = dy
        .iter()
        .zip(y)
        .map(|(&g, &v)| if v > R::zero() { g } else { R::zero() })
        .collect();
    let mut cat = Vec::with_capacity(h.len() + x.len());
    cat.extend_from_slice(h);
    cat.extend_from_slice(x);
    outer_acc(&dpre, &cat, dw.data_mut());
    let mut dcat = vec![R::zero(); cat.len()];
    matvec_t_acc(w.data(), &dpre, &mut dcat);
    let dx = dcat.split_off(h.len());
    (dcat, dx)
}

#[derive(Clone, Debug)]
struct LayerCache<R> {
    input: Tensor<R>,
    lstm: LstmCache<R>,
    /// dropout applied to the LSTM output before the connection layer
    mask: Option<Vec<R>>,
    /// ReLU output of the connection layer (the next layer's input)
    next: Option<Tensor<R>>,
}

#[derive(Clone, Debug)]
pub struct EncoderCache<R> {
    embed_mask: Option<Vec<R>>,
    layers: Vec<LayerCache<R>>,
}

#[derive(Clone, Debug)]
pub struct EncodedSequence<R = f32> {
    /// Final-layer activations, `n × d`.
    pub h_last: Tensor<R>,
    pub cache: Option<EncoderCache<R>>,
}

/// Forward mode. Training draws inverted-dropout masks from the given RNG.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut SeededRng),
}

fn dropout_mask<R: Real>(rng: &mut SeededRng, len: usize, p: f64) -> Vec<R> {
    let keep = R::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { R::zero() } else { keep })
        .collect()
}

fn apply_mask<R: Real>(t: &mut Tensor<R>, mask: &[R]) {
    t.data_mut().iter_mut().zip(mask).for_each(|(v, &m)| *v *= m);
}

/// Run the full stack. In [`Mode::Eval`] the result is a pure function of
/// `(input, params)`; activations needed for backprop are retained only in
/// training mode (or when `keep_cache` is set).
pub fn encode_sequence<R: Real>(
    input: &EncoderInput<'_>,
    params: &EncoderParams<R>,
    mode: Mode<'_>,
) -> Result<EncodedSequence<R>> {
    let keep = matches!(mode, Mode::Train(_));
    encode_inner(input, params, mode, keep)
}

/// Evaluation-mode forward pass that still retains the backprop cache
/// (used by gradient checks).
pub fn encode_with_cache<R: Real>(input: &EncoderInput<'_>, params: &EncoderParams<R>) -> Result<EncodedSequence<R>> {
    encode_inner(input, params, Mode::Eval, true)
}

fn encode_inner<R: Real>(
    input: &EncoderInput<'_>,
    params: &EncoderParams<R>,
    mut mode: Mode<'_>,
    keep: bool,
) -> Result<EncodedSequence<R>> {
    let cfg = &params.config;
    if input.is_empty() {
        return Err(Error::Input("cannot encode an empty sequence".into()));
    }
    let mut x = embed_tokens(input, params)?;
    let embed_mask = match &mut mode {
        Mode::Train(rng) if cfg.dropout_embed > 0.0 => {
            let m = dropout_mask(rng, x.len(), cfg.dropout_embed);
            apply_mask(&mut x, &m);
            Some(m)
        }
        _ => None,
    };
    let mut layers = Vec::with_capacity(cfg.layers);
    let last = cfg.layers - 1;
    for (l, w) in params.lstm.iter().enumerate() {
        let lstm = lstm_forward_cached(&x, Direction::of_layer(l), w)?;
        if l == last {
            let h_last = lstm.hidden.clone();
            layers.push(LayerCache {
                input: x,
                lstm,
                mask: None,
                next: None,
            });
            let cache = keep.then_some(EncoderCache { embed_mask, layers });
            return Ok(EncodedSequence { h_last, cache });
        }
        let mut h = lstm.hidden.clone();
        let mask = match &mut mode {
            Mode::Train(rng) if cfg.dropout_lstm > 0.0 => {
                let m = dropout_mask(rng, h.len(), cfg.dropout_lstm);
                apply_mask(&mut h, &m);
                Some(m)
            }
            _ => None,
        };
        let n = x.rows();
        let mut next = Tensor::zeros(&[n, cfg.hidden]);
        for i in 0..n {
            let y = connection_forward(h.row(i), x.row(i), &params.connections[l])?;
            next.row_mut(i).copy_from_slice(&y);
        }
        layers.push(LayerCache {
            input: x,
            lstm,
            mask,
            next: Some(next.clone()),
        });
        x = next;
    }
    Err(Error::Input("encoder has no layers".into()))
}

/// Parameter gradients for one sequence. Word-table gradients are kept as
/// per-token rows so that batches do not allocate a full table per sequence.
#[derive(Clone, Debug)]
pub struct EncoderGrads<R> {
    pub dense: EncoderParams<R>,
    pub word_rows: Vec<(u32, Vec<R>)>,
}

impl<R: Real> EncoderGrads<R> {
    pub fn zeros(config: &EncoderConfig) -> Self {
        let mut cfg = config.clone();
        cfg.external_dim = Some(cfg.external_dim.unwrap_or(cfg.word_dim));
        let mut dense = EncoderParams::zeros(&cfg);
        dense.config = config.clone();
        dense.word_embedding = Tensor::zeros(&[0, config.word_dim]);
        EncoderGrads {
            dense,
            word_rows: Vec::new(),
        }
    }

    /// Scatter into a full-shape gradient (word table included).
    pub fn accumulate_into(&self, total: &mut EncoderParams<R>) {
        for (dst, src) in total
            .tensors_mut()
            .into_iter()
            .zip(self.dense.named().into_iter().map(|(_, t)| t))
            .skip(1)
        {
            axpy(R::one(), src.data(), dst.data_mut());
        }
        for (id, row) in &self.word_rows {
            axpy(R::one(), row, total.word_embedding.row_mut(*id as usize));
        }
    }
}

/// Backpropagate `∂loss/∂h_last` through the stack.
pub fn encoder_backward<R: Real>(
    input: &EncoderInput<'_>,
    params: &EncoderParams<R>,
    encoded: &EncodedSequence<R>,
    d_h_last: &Tensor<R>,
) -> Result<EncoderGrads<R>> {
    let cache = encoded
        .cache
        .as_ref()
        .ok_or_else(|| Error::Input("backward pass needs a cached forward pass".into()))?;
    let cfg = &params.config;
    let mut grads = EncoderGrads::zeros(cfg);
    let mut dh = d_h_last.clone();
    // gradient flowing into the current layer's input from a connection layer
    let mut dx_extra: Option<Tensor<R>> = None;
    for l in (0..cfg.layers).rev() {
        let lc = &cache.layers[l];
        let mut dx = lstm_backward(&lc.input, &lc.lstm, &params.lstm[l], &dh, &mut grads.dense.lstm[l]);
        if let Some(extra) = dx_extra.take() {
            dx.add_assign(&extra)?;
        }
        if l == 0 {
            if let Some(m) = &cache.embed_mask {
                apply_mask(&mut dx, m);
            }
            let tok = cfg.token_dim();
            for i in 0..dx.rows() {
                let row = dx.row(i);
                let bit = input.predicate_bits[i] as usize;
                axpy(R::one(), &row[tok..], grads.dense.predicate_embedding.row_mut(bit));
                if cfg.external_dim.is_none() {
                    grads.word_rows.push((input.word_ids[i], row[..tok].to_vec()));
                }
            }
            break;
        }
        // dx is the gradient w.r.t. the output of connection layer l-1
        let prev = &cache.layers[l - 1];
        let next = prev.next.as_ref().expect("inner layers cache connection output");
        let n = dx.rows();
        let mut h_in = prev.lstm.hidden.clone();
        if let Some(m) = &prev.mask {
            apply_mask(&mut h_in, m);
        }
        let mut dh_prev = Tensor::zeros(&[n, cfg.hidden]);
        let mut dx_prev = Tensor::zeros(prev.input.shape());
        for i in 0..n {
            let (dhi, dxi) = connection_backward(
                h_in.row(i),
                prev.input.row(i),
                &params.connections[l - 1],
                next.row(i),
                dx.row(i),
                &mut grads.dense.connections[l - 1],
            );
            dh_prev.row_mut(i).copy_from_slice(&dhi);
            dx_prev.row_mut(i).copy_from_slice(&dxi);
        }
        if let Some(m) = &prev.mask {
            apply_mask(&mut dh_prev, m);
        }
        dh = dh_prev;
        dx_extra = Some(dx_prev);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, stream};
    use crate::tensor::finite_difference_check;

    fn small_config(layers: usize, hidden: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 6,
            word_dim: 3,
            predicate_dim: 2,
            hidden,
            layers,
            external_dim: None,
            dropout_embed: 0.0,
            dropout_lstm: 0.0,
        }
    }

    fn input() -> (Vec<u32>, Vec<u8>) {
        (vec![2, 5, 3], vec![0, 1, 0])
    }

    #[test]
    fn embed_width_and_structure() {
        let cfg = EncoderConfig {
            vocab_size: 10,
            ..EncoderConfig::default()
        };
        let p: EncoderParams<f64> = EncoderParams::init(&cfg, &mut seeded(1, stream::INIT));
        let bits = [0u8, 1];
        let inp = EncoderInput {
            word_ids: vec![4, 4],
            predicate_bits: &bits,
            external: None,
        };
        let e = embed_tokens(&inp, &p).unwrap();
        assert_eq!(e.cols(), 64 + 50);
        assert_eq!(e.row(0)[..64], e.row(1)[..64]);
        assert!(e.row(0)[64..].iter().zip(&e.row(1)[64..]).all(|(a, b)| a != b));
        let mut expect = p.word_embedding.row(4).to_vec();
        expect.extend_from_slice(p.predicate_embedding.row(1));
        assert_eq!(e.row(1), &expect[..]);

        let bad = EncoderInput {
            word_ids: vec![10, 0],
            predicate_bits: &bits,
            external: None,
        };
        assert!(matches!(embed_tokens(&bad, &p), Err(Error::Lookup(_))));
    }

    #[test]
    fn zero_lstm_gives_zero_output() {
        let w = LstmWeights::<f64>::zeros(3, 4);
        let x = Tensor::filled(&[5, 3], 0.7);
        let h = lstm_layer_forward(&x, Direction::Forward, &w).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_unrolled_gates() {
        let mut rng = seeded(9, 0);
        let w: LstmWeights<f64> = LstmWeights {
            w_input: rng::uniform(&mut rng, &[8, 3], 1.0),
            w_recurrent: rng::uniform(&mut rng, &[8, 2], 1.0),
            bias: rng::uniform(&mut rng, &[8], 1.0),
        };
        let x = Tensor::from_f64(&[1, 3], &[0.5, -1.0, 0.25]).unwrap();
        let h = lstm_layer_forward(&x, Direction::Forward, &w).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for k in 0..2 {
            let pre = |gate: usize| {
                let r = gate * 2 + k;
                let mut s = w.bias.data()[r];
                for j in 0..3 {
                    s += w.w_input.at(r, j) * x.at(0, j);
                }
                s
            };
            let i = sig(pre(0));
            let g = pre(2).tanh();
            let o = sig(pre(3));
            let c = i * g;
            let expect = o * c.tanh();
            assert!((h.at(0, k) - expect).abs() <= 1e-12, "{} vs {expect}", h.at(0, k));
        }
    }

    #[test]
    fn backward_direction_is_reversed_forward() {
        let mut rng = seeded(4, 0);
        let w: LstmWeights<f64> = LstmWeights {
            w_input: rng::uniform(&mut rng, &[12, 2], 1.0),
            w_recurrent: rng::uniform(&mut rng, &[12, 3], 1.0),
            bias: rng::uniform(&mut rng, &[12], 1.0),
        };
        let x: Tensor<f64> = rng::uniform(&mut rng, &[4, 2], 1.0);
        let mut xr = Tensor::zeros(&[4, 2]);
        for t in 0..4 {
            xr.row_mut(t).copy_from_slice(x.row(3 - t));
        }
        let b = lstm_layer_forward(&x, Direction::Backward, &w).unwrap();
        let f = lstm_layer_forward(&xr, Direction::Forward, &w).unwrap();
        for t in 0..4 {
            assert_eq!(b.row(t), f.row(3 - t));
        }
    }

    #[test]
    fn connection_zero_and_clamp() {
        let h = [1.0f64, -2.0];
        let x = [0.5f64];
        let w0 = Tensor::<f64>::zeros(&[2, 3]);
        assert_eq!(connection_forward(&h, &x, &w0).unwrap(), vec![0.0, 0.0]);
        // rows chosen so W [h; x] is negative everywhere
        let w = Tensor::from_f64(&[2, 3], &[-1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(connection_forward(&h, &x, &w).unwrap(), vec![0.0, 0.0]);
        assert!(connection_forward(&h, &x, &Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn connection_gradient_fd() {
        let mut rng = seeded(21, 0);
        let h: Vec<f64> = rng::uniform::<f64>(&mut rng, &[4], 1.0).into_data();
        let x: Vec<f64> = rng::uniform::<f64>(&mut rng, &[3], 1.0).into_data();
        let w: Tensor<f64> = rng::uniform(&mut rng, &[5, 7], 1.0);
        let c: Vec<f64> = rng::uniform::<f64>(&mut rng, &[5], 1.0).into_data();
        let y = connection_forward(&h, &x, &w).unwrap();
        let mut dw = Tensor::zeros(w.shape());
        let (dh, dx) = connection_backward(&h, &x, &w, &y, &c, &mut dw);
        let loss = |h: &[f64], x: &[f64], w: &Tensor<f64>| dot(&connection_forward(h, x, w).unwrap(), &c);
        let ht = Tensor::vector(h.clone());
        let xt = Tensor::vector(x.clone());
        let e1 = finite_difference_check(|t| loss(t.data(), &x, &w), &ht, &Tensor::vector(dh), 1e-3).unwrap();
        let e2 = finite_difference_check(|t| loss(&h, t.data(), &w), &xt, &Tensor::vector(dx), 1e-3).unwrap();
        let e3 = finite_difference_check(|t| loss(&h, &x, t), &w, &dw, 1e-3).unwrap();
        assert!(e1 < 1e-4 && e2 < 1e-4 && e3 < 1e-4, "{e1} {e2} {e3}");
    }

    #[test]
    fn default_directions_alternate() {
        let cfg = EncoderConfig::default();
        assert_eq!(
            cfg.directions(),
            vec![
                Direction::Forward,
                Direction::Backward,
                Direction::Forward,
                Direction::Backward
            ]
        );
        assert_eq!(cfg.hidden, 300);
        assert_eq!(cfg.predicate_dim, 50);
    }

    #[test]
    fn default_shape_and_eval_determinism() {
        let cfg = EncoderConfig {
            vocab_size: 8,
            ..EncoderConfig::default()
        };
        let p: EncoderParams<f32> = EncoderParams::init(&cfg, &mut seeded(2, stream::INIT));
        let (ids, bits) = input();
        let inp = EncoderInput {
            word_ids: ids,
            predicate_bits: &bits,
            external: None,
        };
        let a = encode_sequence(&inp, &p, Mode::Eval).unwrap();
        let b = encode_sequence(&inp, &p, Mode::Eval).unwrap();
        assert_eq!(a.h_last.shape(), &[3, 300]);
        assert_eq!(a.h_last, b.h_last);
        assert!(a.cache.is_none());
    }

    fn stack_loss(p: &EncoderParams<f64>, ids: &[u32], bits: &[u8]) -> f64 {
        let inp = EncoderInput {
            word_ids: ids.to_vec(),
            predicate_bits: bits,
            external: None,
        };
        encode_sequence(&inp, p, Mode::Eval).unwrap().h_last.data().iter().sum()
    }

    #[test]
    fn full_stack_gradient_check() {
        for layers in [2usize, 3] {
            let cfg = small_config(layers, 8);
            let p: EncoderParams<f64> = EncoderParams::init(&cfg, &mut seeded(13, stream::INIT));
            let (ids, bits) = input();
            let inp = EncoderInput {
                word_ids: ids.clone(),
                predicate_bits: &bits,
                external: None,
            };
            let enc = encode_with_cache(&inp, &p).unwrap();
            let ones = Tensor::filled(enc.h_last.shape(), 1.0);
            let g = encoder_backward(&inp, &p, &enc, &ones).unwrap();
            let mut full = EncoderParams::zeros(&cfg);
            g.accumulate_into(&mut full);

            let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
            let grads: Vec<Tensor<f64>> = full.named().into_iter().map(|(_, t)| t.clone()).collect();
            for (idx, name) in names.iter().enumerate() {
                let theta = p.named()[idx].1.clone();
                let err = finite_difference_check(
                    |t| {
                        let mut q = p.clone();
                        *q.tensors_mut()[idx] = t.clone();
                        stack_loss(&q, &ids, &bits)
                    },
                    &theta,
                    &grads[idx],
                    1e-3,
                )
                .unwrap();
                assert!(err < 1e-4, "layers={layers} {name}: {err}");
            }
        }
    }

    #[test]
    fn dropout_gradient_uses_same_masks() {
        let mut cfg = small_config(2, 4);
        cfg.dropout_embed = 0.3;
        cfg.dropout_lstm = 0.2;
        let p: EncoderParams<f64> = EncoderParams::init(&cfg, &mut seeded(5, stream::INIT));
        let (ids, bits) = input();
        let inp = EncoderInput {
            word_ids: ids.clone(),
            predicate_bits: &bits,
            external: None,
        };
        let enc = encode_sequence(&inp, &p, Mode::Train(&mut seeded(77, stream::DROPOUT))).unwrap();
        let ones = Tensor::filled(enc.h_last.shape(), 1.0);
        let g = encoder_backward(&inp, &p, &enc, &ones).unwrap();
        let mut full = EncoderParams::zeros(&cfg);
        g.accumulate_into(&mut full);
        let idx = 4; // encoder.lstm.0.bias
        let theta = p.named()[idx].1.clone();
        let err = finite_difference_check(
            |t| {
                let mut q = p.clone();
                *q.tensors_mut()[idx] = t.clone();
                encode_sequence(&inp, &q, Mode::Train(&mut seeded(77, stream::DROPOUT)))
                    .unwrap()
                    .h_last
                    .data()
                    .iter()
                    .sum()
            },
            &theta,
            full.named()[idx].1,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
