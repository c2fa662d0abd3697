//! Parameterized neighborhood representation.
//!
//! For a token representation `h` and its `K` retrieved neighbors `m_1..m_K`
//! (rank order), the weights are a softmax over the neighbor slots
//!
//! ```text
//! η_i = softmax_i( n_i · |m_i − h| )        (|·| elementwise)
//! n_K = Σ_i η_i m_i
//! ```
//!
//! and `n_K` replaces `h` as the input of the emission layer. How the logits
//! are formed is a [`NeighborhoodWeighting`] strategy; `distinct` (one `n_i`
//! per rank) is the default.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::{self, SeededRng};
use crate::tensor::{axpy, dot, Real, Tensor};

pub const DEFAULT_K: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodParams<R = f32> {
    pub k: usize,
    /// One row per parameter vector (`K` rows for `distinct`, 1 for `shared`,
    /// 0 for `distance`), each of width `d`.
    pub vectors: Tensor<R>,
}

impl<R: Real> NeighborhoodParams<R> {
    pub fn zeros(k: usize, rows: usize, d: usize) -> Self {
        NeighborhoodParams {
            k,
            vectors: Tensor::zeros(&[rows, d]),
        }
    }

    /// N(0, 0.02) so that initial weights are close to uniform.
    pub fn init(k: usize, rows: usize, d: usize, rng: &mut SeededRng) -> Self {
        NeighborhoodParams {
            k,
            vectors: rng::normal(rng, &[rows, d], 0.02),
        }
    }

    pub fn width(&self) -> usize {
        self.vectors.cols()
    }
}

/// Produces the pre-softmax score of every neighbor slot.
pub trait NeighborhoodWeighting<R: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Parameter rows needed for `k` neighbors.
    fn param_rows(&self, k: usize) -> usize;

    /// `m` is `K × d`; `dist` holds the Euclidean distances of the neighbors.
    fn logits(&self, h: &[R], m: &Tensor<R>, dist: &[R], params: &Tensor<R>) -> Vec<R>;

    /// Accumulate gradients of the logits into `grad_params`, `dh` and `dm`.
    #[allow(clippy::too_many_arguments)]
    fn logits_backward(
        &self,
        h: &[R],
        m: &Tensor<R>,
        dist: &[R],
        params: &Tensor<R>,
        d_logits: &[R],
        grad_params: &mut Tensor<R>,
        dh: &mut [R],
        dm: &mut Tensor<R>,
    );
}

fn sign<R: Real>(v: R) -> R {
    if v > R::zero() {
        R::one()
    } else if v < R::zero() {
        -R::one()
    } else {
        R::zero()
    }
}

fn abs_diff_logit<R: Real>(n: &[R], m: &[R], h: &[R]) -> R {
    let mut s = R::zero();
    for ((&a, &b), &c) in n.iter().zip(m).zip(h) {
        s += a * (b - c).abs();
    }
    s
}

/// Shared backward for `logit_i = n_{r(i)} · |m_i − h|`.
#[allow(clippy::too_many_arguments)]
fn abs_diff_backward<R: Real>(
    h: &[R],
    m: &Tensor<R>,
    params: &Tensor<R>,
    row_of: impl Fn(usize) -> usize,
    d_logits: &[R],
    grad_params: &mut Tensor<R>,
    dh: &mut [R],
    dm: &mut Tensor<R>,
) {
    let d = h.len();
    for (i, &g) in d_logits.iter().enumerate() {
        let r = row_of(i);
        let mi = m.row(i).to_vec();
        let n = params.row(r).to_vec();
        let gp = grad_params.row_mut(r);
        for k in 0..d {
            gp[k] += g * (mi[k] - h[k]).abs();
        }
        let dmi = dm.row_mut(i);
        for k in 0..d {
            let s = g * n[k] * sign(mi[k] - h[k]);
            dmi[k] += s;
            dh[k] -= s;
        }
    }
}

/// One parameter vector per neighbor rank.
pub struct DistinctWeighting;

impl<R: Real> NeighborhoodWeighting<R> for DistinctWeighting {
    fn name(&self) -> &'static str {
        "distinct"
    }

    fn param_rows(&self, k: usize) -> usize {
        k
    }

    fn logits(&self, h: &[R], m: &Tensor<R>, _dist: &[R], params: &Tensor<R>) -> Vec<R> {
        (0..m.rows())
            .map(|i| abs_diff_logit(params.row(i), m.row(i), h))
            .collect()
    }

    fn logits_backward(
        &self,
        h: &[R],
        m: &Tensor<R>,
        _dist: &[R],
        params: &Tensor<R>,
        d_logits: &[R],
        grad_params: &mut Tensor<R>,
        dh: &mut [R],
        dm: &mut Tensor<R>,
    ) {
        abs_diff_backward(h, m, params, |i| i, d_logits, grad_params, dh, dm);
    }
}

/// A single parameter vector shared by all neighbor slots.
pub struct SharedWeighting;

impl<R: Real> NeighborhoodWeighting<R> for SharedWeighting {
    fn name(&self) -> &'static str {
        "shared"
    }

    fn param_rows(&self, _k: usize) -> usize {
        1
    }

    fn logits(&self, h: &[R], m: &Tensor<R>, _dist: &[R], params: &Tensor<R>) -> Vec<R> {
        (0..m.rows())
            .map(|i| abs_diff_logit(params.row(0), m.row(i), h))
            .collect()
    }

    fn logits_backward(
        &self,
        h: &[R],
        m: &Tensor<R>,
        _dist: &[R],
        params: &Tensor<R>,
        d_logits: &[R],
        grad_params: &mut Tensor<R>,
        dh: &mut [R],
        dm: &mut Tensor<R>,
    ) {
        abs_diff_backward(h, m, params, |_| 0, d_logits, grad_params, dh, dm);
    }
}

/// Parameter-free heuristic: `logit_i = −‖m_i − h‖`.
pub struct DistanceWeighting;

impl<R: Real> NeighborhoodWeighting<R> for DistanceWeighting {
    fn name(&self) -> &'static str {
        "distance"
    }

    fn param_rows(&self, _k: usize) -> usize {
        0
    }

    fn logits(&self, _h: &[R], _m: &Tensor<R>, dist: &[R], _params: &Tensor<R>) -> Vec<R> {
        dist.iter().map(|&d| -d).collect()
    }

    fn logits_backward(
        &self,
        h: &[R],
        m: &Tensor<R>,
        dist: &[R],
        _params: &Tensor<R>,
        d_logits: &[R],
        _grad_params: &mut Tensor<R>,
        dh: &mut [R],
        dm: &mut Tensor<R>,
    ) {
        for (i, &g) in d_logits.iter().enumerate() {
            if dist[i] <= R::zero() {
                continue;
            }
            let mi = m.row(i).to_vec();
            let dmi = dm.row_mut(i);
            for k in 0..h.len() {
                // d(-‖m−h‖)/dm = -(m−h)/‖m−h‖
                let u = (mi[k] - h[k]) / dist[i];
                dmi[k] -= g * u;
                dh[k] += g * u;
            }
        }
    }
}

pub fn weighting_registry<R: Real>() -> Registry<dyn NeighborhoodWeighting<R>> {
    let mut r: Registry<dyn NeighborhoodWeighting<R>> = Registry::new("neighborhood weighting");
    r.register("distinct", || Box::new(DistinctWeighting));
    r.register("shared", || Box::new(SharedWeighting));
    r.register("distance", || Box::new(DistanceWeighting));
    r
}

fn check<R: Real>(
    h: &[R],
    m: &Tensor<R>,
    dist: &[R],
    params: &NeighborhoodParams<R>,
    weighting: &dyn NeighborhoodWeighting<R>,
) -> Result<()> {
    if m.rows() == 0 {
        return Err(Error::Domain("empty neighbor set".into()));
    }
    if m.cols() != h.len() {
        return Err(Error::dim("neighborhood", m.shape(), &[h.len()]));
    }
    if dist.len() != m.rows() {
        return Err(Error::dim("neighborhood distances", &[dist.len()], m.shape()));
    }
    let rows = weighting.param_rows(m.rows());
    if rows > 0 && (params.vectors.rows() < rows || params.vectors.cols() != h.len()) {
        return Err(Error::dim(
            "neighborhood params",
            params.vectors.shape(),
            &[rows, h.len()],
        ));
    }
    Ok(())
}

/// Summation order for `η` and `n_K`: by logit, then by neighbor vector. It
/// depends only on the (logit, vector) pairs, so permuting neighbors together
/// with their parameters leaves both sums bit-identical.
fn canonical_order<R: Real>(logits: &[R], m: &Tensor<R>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| {
        logits[a]
            .partial_cmp(&logits[b])
            .unwrap_or(Ordering::Equal)
            .then_with(|| m.row(a).partial_cmp(m.row(b)).unwrap_or(Ordering::Equal))
    });
    order
}

fn weights_in_order<R: Real>(
    h: &[R],
    m: &Tensor<R>,
    dist: &[R],
    params: &NeighborhoodParams<R>,
    weighting: &dyn NeighborhoodWeighting<R>,
) -> Result<(Vec<R>, Vec<usize>)> {
    check(h, m, dist, params, weighting)?;
    let logits = weighting.logits(h, m, dist, &params.vectors);
    let order = canonical_order(&logits, m);
    let max = logits.iter().copied().fold(R::neg_infinity(), R::max);
    let mut eta: Vec<R> = logits.iter().map(|&v| (v - max).exp()).collect();
    let mut total = R::zero();
    for &i in &order {
        total += eta[i];
    }
    eta.iter_mut().for_each(|v| *v /= total);
    Ok((eta, order))
}

/// `η` over the `K` neighbor slots.
pub fn neighborhood_weights<R: Real>(
    h: &[R],
    m: &Tensor<R>,
    dist: &[R],
    params: &NeighborhoodParams<R>,
    weighting: &dyn NeighborhoodWeighting<R>,
) -> Result<Vec<R>> {
    Ok(weights_in_order(h, m, dist, params, weighting)?.0)
}

/// `n_K = Σ η_i m_i`, returned together with `η`.
pub fn neighborhood_repr<R: Real>(
    h: &[R],
    m: &Tensor<R>,
    dist: &[R],
    params: &NeighborhoodParams<R>,
    weighting: &dyn NeighborhoodWeighting<R>,
) -> Result<(Vec<R>, Vec<R>)> {
    let (eta, order) = weights_in_order(h, m, dist, params, weighting)?;
    let mut out = vec![R::zero(); h.len()];
    for &i in &order {
        axpy(eta[i], m.row(i), &mut out);
    }
    Ok((out, eta))
}

/// Gradients of a loss on `n_K` w.r.t. the neighborhood parameters, `h` and
/// the neighbor vectors. Callers discard `dm` since the memory is frozen.
#[derive(Clone, Debug)]
pub struct NeighborhoodGrads<R> {
    pub params: Tensor<R>,
    pub h: Vec<R>,
    pub m: Tensor<R>,
}

#[allow(clippy::too_many_arguments)]
pub fn neighborhood_backward<R: Real>(
    h: &[R],
    m: &Tensor<R>,
    dist: &[R],
    params: &NeighborhoodParams<R>,
    weighting: &dyn NeighborhoodWeighting<R>,
    eta: &[R],
    d_repr: &[R],
) -> NeighborhoodGrads<R> {
    let k = m.rows();
    let mut dm = Tensor::zeros(m.shape());
    // direct path through n_K = Σ η_i m_i
    for (i, &w) in eta.iter().enumerate() {
        axpy(w, d_repr, dm.row_mut(i));
    }
    let d_eta: Vec<R> = (0..k).map(|i| dot(d_repr, m.row(i))).collect();
    let mean: R = eta.iter().zip(&d_eta).map(|(&e, &g)| e * g).sum();
    let d_logits: Vec<R> = eta.iter().zip(&d_eta).map(|(&e, &g)| e * (g - mean)).collect();
    let mut grad_params = Tensor::zeros(params.vectors.shape());
    let mut dh = vec![R::zero(); h.len()];
    weighting.logits_backward(
        h,
        m,
        dist,
        &params.vectors,
        &d_logits,
        &mut grad_params,
        &mut dh,
        &mut dm,
    );
    NeighborhoodGrads {
        params: grad_params,
        h: dh,
        m: dm,
    }
}
