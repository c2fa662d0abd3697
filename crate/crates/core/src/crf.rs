//! Linear-chain CRF with an affine emission layer.
//!
//! Path score: `start[y0] + Σ_t emit[t, y_t] + Σ_t trans[y_{t-1}, y_t] + stop[y_{n-1}]`.

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::tensor::{axpy, logsumexp_slice, matvec_acc, matvec_t_acc, outer_acc, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams<R = f32> {
    /// `|Y| × d`
    pub emit_w: Tensor<R>,
    /// `|Y|`
    pub emit_b: Tensor<R>,
    /// `|Y| × |Y|`, `trans[from, to]`
    pub transitions: Tensor<R>,
    pub start: Tensor<R>,
    pub stop: Tensor<R>,
}

impl<R: Real> CrfParams<R> {
    pub fn zeros(num_tags: usize, input_dim: usize) -> Self {
        CrfParams {
            emit_w: Tensor::zeros(&[num_tags, input_dim]),
            emit_b: Tensor::zeros(&[num_tags]),
            transitions: Tensor::zeros(&[num_tags, num_tags]),
            start: Tensor::zeros(&[num_tags]),
            stop: Tensor::zeros(&[num_tags]),
        }
    }

    pub fn init(num_tags: usize, input_dim: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(num_tags, input_dim);
        p.emit_w = rng::uniform(rng, &[num_tags, input_dim], 1.0 / (input_dim as f64).sqrt());
        p
    }

    pub fn num_tags(&self) -> usize {
        self.emit_b.len()
    }

    pub fn input_dim(&self) -> usize {
        self.emit_w.cols()
    }

    pub fn named(&self) -> Vec<(String, &Tensor<R>)> {
        vec![
            ("crf.emit_w".into(), &self.emit_w),
            ("crf.emit_b".into(), &self.emit_b),
            ("crf.transitions".into(), &self.transitions),
            ("crf.start".into(), &self.start),
            ("crf.stop".into(), &self.stop),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        vec![
            &mut self.emit_w,
            &mut self.emit_b,
            &mut self.transitions,
            &mut self.start,
            &mut self.stop,
        ]
    }
}

/// Tag scores `W_e x_t + b_e` for every row of `inputs` (`n × d`).
pub fn emission_scores<R: Real>(inputs: &Tensor<R>, params: &CrfParams<R>) -> Result<Tensor<R>> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::dim("emission_scores", inputs.shape(), params.emit_w.shape()));
    }
    let n = inputs.rows();
    let y = params.num_tags();
    let mut out = Tensor::zeros(&[n, y]);
    for t in 0..n {
        let row = out.row_mut(t);
        row.copy_from_slice(params.emit_b.data());
        matvec_acc(params.emit_w.data(), inputs.row(t), row);
    }
    Ok(out)
}

/// Backward of [`emission_scores`]; accumulates into `grad.emit_*` and returns `∂inputs`.
pub fn emission_backward<R: Real>(
    inputs: &Tensor<R>,
    params: &CrfParams<R>,
    d_emissions: &Tensor<R>,
    grad: &mut CrfParams<R>,
) -> Tensor<R> {
    let mut dx = Tensor::zeros(inputs.shape());
    for t in 0..inputs.rows() {
        let de = d_emissions.row(t);
        axpy(R::one(), de, grad.emit_b.data_mut());
        outer_acc(de, inputs.row(t), grad.emit_w.data_mut());
        matvec_t_acc(params.emit_w.data(), de, dx.row_mut(t));
    }
    dx
}

fn check_shapes<R: Real>(emissions: &Tensor<R>, params: &CrfParams<R>) -> Result<()> {
    if emissions.shape().len() != 2 || emissions.cols() != params.num_tags() {
        return Err(Error::dim("crf", emissions.shape(), params.transitions.shape()));
    }
    if emissions.rows() == 0 {
        return Err(Error::Domain("CRF over an empty sequence".into()));
    }
    Ok(())
}

pub fn path_score<R: Real>(emissions: &Tensor<R>, tags: &[u32], params: &CrfParams<R>) -> R {
    let mut s = params.start.data()[tags[0] as usize];
    for (t, &y) in tags.iter().enumerate() {
        s += emissions.at(t, y as usize);
        if t > 0 {
            s += params.transitions.at(tags[t - 1] as usize, y as usize);
        }
    }
    s + params.stop.data()[*tags.last().unwrap() as usize]
}

/// Forward algorithm: `α[t, y]` in log space. Returns `(α, log Z)`.
fn forward<R: Real>(emissions: &Tensor<R>, params: &CrfParams<R>) -> Result<(Tensor<R>, R)> {
    let (n, k) = (emissions.rows(), emissions.cols());
    let mut alpha = Tensor::zeros(&[n, k]);
    for y in 0..k {
        alpha.set(0, y, params.start.data()[y] + emissions.at(0, y));
    }
    let mut buf = vec![R::zero(); k];
    for t in 1..n {
        for y in 0..k {
            for (p, b) in buf.iter_mut().enumerate() {
                *b = alpha.at(t - 1, p) + params.transitions.at(p, y);
            }
            alpha.set(t, y, logsumexp_slice(&buf)? + emissions.at(t, y));
        }
    }
    for (y, b) in buf.iter_mut().enumerate() {
        *b = alpha.at(n - 1, y) + params.stop.data()[y];
    }
    let log_z = logsumexp_slice(&buf)?;
    Ok((alpha, log_z))
}

fn backward<R: Real>(emissions: &Tensor<R>, params: &CrfParams<R>) -> Result<Tensor<R>> {
    let (n, k) = (emissions.rows(), emissions.cols());
    let mut beta = Tensor::zeros(&[n, k]);
    beta.row_mut(n - 1).copy_from_slice(params.stop.data());
    let mut buf = vec![R::zero(); k];
    for t in (0..n - 1).rev() {
        for y in 0..k {
            for (q, b) in buf.iter_mut().enumerate() {
                *b = params.transitions.at(y, q) + emissions.at(t + 1, q) + beta.at(t + 1, q);
            }
            beta.set(t, y, logsumexp_slice(&buf)?);
        }
    }
    Ok(beta)
}

pub fn log_partition<R: Real>(emissions: &Tensor<R>, params: &CrfParams<R>) -> Result<R> {
    check_shapes(emissions, params)?;
    Ok(forward(emissions, params)?.1)
}

/// Result of [`crf_log_likelihood`]: the log-likelihood and gradients of it
/// (not of its negation) w.r.t. the emissions and the transition/start/stop
/// parameters. The `emit_*` fields of `grad_params` are left zero.
#[derive(Clone, Debug)]
pub struct CrfLikelihood<R> {
    pub log_likelihood: R,
    pub log_partition: R,
    pub grad_emissions: Tensor<R>,
    pub grad_params: CrfParams<R>,
}

pub fn crf_log_likelihood<R: Real>(
    emissions: &Tensor<R>,
    gold: &[u32],
    params: &CrfParams<R>,
) -> Result<CrfLikelihood<R>> {
    check_shapes(emissions, params)?;
    let (n, k) = (emissions.rows(), emissions.cols());
    if gold.len() != n {
        return Err(Error::dim("crf_log_likelihood", &[gold.len()], emissions.shape()));
    }
    if let Some(&bad) = gold.iter().find(|&&y| y as usize >= k) {
        return Err(Error::Domain(format!("gold tag {bad} outside {k} tags")));
    }
    let (alpha, log_z) = forward(emissions, params)?;
    let beta = backward(emissions, params)?;
    let gold_score = path_score(emissions, gold, params);

    let mut grad = CrfParams::zeros(k, params.input_dim());
    let mut d_em = Tensor::zeros(&[n, k]);
    // gold counts
    grad.start.data_mut()[gold[0] as usize] += R::one();
    grad.stop.data_mut()[gold[n - 1] as usize] += R::one();
    for t in 0..n {
        let row = d_em.row_mut(t);
        row[gold[t] as usize] += R::one();
        if t > 0 {
            let c = grad.transitions.at(gold[t - 1] as usize, gold[t] as usize);
            grad.transitions
                .set(gold[t - 1] as usize, gold[t] as usize, c + R::one());
        }
    }
    // minus expected counts
    for t in 0..n {
        for y in 0..k {
            let m = (alpha.at(t, y) + beta.at(t, y) - log_z).exp();
            let row = d_em.row_mut(t);
            row[y] -= m;
            if t == 0 {
                grad.start.data_mut()[y] -= m;
            }
            if t == n - 1 {
                grad.stop.data_mut()[y] -= m;
            }
        }
        if t > 0 {
            for p in 0..k {
                for q in 0..k {
                    let m = (alpha.at(t - 1, p) + params.transitions.at(p, q) + emissions.at(t, q) + beta.at(t, q)
                        - log_z)
                        .exp();
                    let c = grad.transitions.at(p, q);
                    grad.transitions.set(p, q, c - m);
                }
            }
        }
    }
    Ok(CrfLikelihood {
        log_likelihood: gold_score - log_z,
        log_partition: log_z,
        grad_emissions: d_em,
        grad_params: grad,
    })
}

/// Highest-scoring tag path. Ties go to the lowest tag index at every step.
pub fn viterbi_decode<R: Real>(emissions: &Tensor<R>, params: &CrfParams<R>) -> Result<Vec<u32>> {
    check_shapes(emissions, params)?;
    let (n, k) = (emissions.rows(), emissions.cols());
    let mut score: Vec<R> = (0..k).map(|y| params.start.data()[y] + emissions.at(0, y)).collect();
    let mut back = vec![0u32; n * k];
    let mut next = vec![R::zero(); k];
    for t in 1..n {
        for q in 0..k {
            let mut best = 0usize;
            let mut best_v = score[0] + params.transitions.at(0, q);
            for (p, &s) in score.iter().enumerate().skip(1) {
                let v = s + params.transitions.at(p, q);
                if v > best_v {
                    best_v = v;
                    best = p;
                }
            }
            next[q] = best_v + emissions.at(t, q);
            back[t * k + q] = best as u32;
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = 0usize;
    let mut last_v = score[0] + params.stop.data()[0];
    for (y, &s) in score.iter().enumerate().skip(1) {
        let v = s + params.stop.data()[y];
        if v > last_v {
            last_v = v;
            last = y;
        }
    }
    let mut path = vec![0u32; n];
    path[n - 1] = last as u32;
    for t in (1..n).rev() {
        path[t - 1] = back[t * k + path[t] as usize];
    }
    Ok(path)
}
