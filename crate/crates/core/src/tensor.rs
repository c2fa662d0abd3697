//! Dense row-major tensors and the small set of kernels every layer is built from.
//!
//! There is no autodiff graph: each layer in this crate exposes an explicit
//! forward/backward pair built on [`linear_affine`] / [`linear_affine_backward`]
//! and the helpers here, and every backward pass is checked against
//! [`finite_difference_check`] in the test suites.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type of every tensor. Implemented for `f32` (training default) and
/// `f64` (verification runs).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_f32_bits(v: f32) -> Self {
        Self::from_f32(v).expect("f32 widens to every Real")
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R = f32> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![R::zero(); len],
        }
    }

    pub fn filled(shape: &[usize], value: R) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<R>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim("tensor", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<R>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| R::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent; a 1-D tensor is a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Trailing extent.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[R] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [R] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> R {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: R) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn fill(&mut self, v: R) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor<R>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("add", &self.shape, &other.shape));
        }
        axpy(R::one(), &other.data, &mut self.data);
        Ok(())
    }

    pub fn scale(&mut self, a: R) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v.f64() * v.f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| S::from_f64(v.f64()).unwrap_or_else(S::nan))
                .collect(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.to_f32_lossy()).collect()
    }

    /// Rows `[start, end)` of a 2-D tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor<R> {
        let c = self.cols();
        Tensor {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        }
    }
}

/// Unrolled dot product. The summation order is fixed, so results are
/// reproducible across runs and thread counts.
#[inline]
pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (R::zero(), R::zero(), R::zero(), R::zero());
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

/// `y += a * x`
#[inline]
pub fn axpy<R: Real>(a: R, x: &[R], y: &mut [R]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out[j] += Σ_k w[j, k] * x[k]` for a row-major `rows × x.len()` matrix.
#[inline]
pub fn matvec_acc<R: Real>(w: &[R], x: &[R], out: &mut [R]) {
    let cols = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o += dot(&w[j * cols..(j + 1) * cols], x);
    }
}

/// `dx[k] += Σ_j w[j, k] * dy[j]` (transposed product), row-major `dy.len() × dx.len()`.
#[inline]
pub fn matvec_t_acc<R: Real>(w: &[R], dy: &[R], dx: &mut [R]) {
    let cols = dx.len();
    for (j, &g) in dy.iter().enumerate() {
        if g != R::zero() {
            axpy(g, &w[j * cols..(j + 1) * cols], dx);
        }
    }
}

/// `dw[j, k] += dy[j] * x[k]`
#[inline]
pub fn outer_acc<R: Real>(dy: &[R], x: &[R], dw: &mut [R]) {
    let cols = x.len();
    for (j, &g) in dy.iter().enumerate() {
        if g != R::zero() {
            axpy(g, x, &mut dw[j * cols..(j + 1) * cols]);
        }
    }
}

/// `y = W x + b`
pub fn linear_affine<R: Real>(x: &Tensor<R>, w: &Tensor<R>, b: &Tensor<R>) -> Result<Tensor<R>> {
    check_affine(x, w, b)?;
    let mut y = b.data().to_vec();
    matvec_acc(w.data(), x.data(), &mut y);
    Ok(Tensor::vector(y))
}

/// Gradients of [`linear_affine`]: returns `(∂x, ∂W, ∂b)` given `∂y`.
pub fn linear_affine_backward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    dy: &Tensor<R>,
) -> Result<(Tensor<R>, Tensor<R>, Tensor<R>)> {
    if w.shape().len() != 2 || w.shape()[1] != x.len() || w.shape()[0] != dy.len() {
        return Err(Error::dim("linear_affine_backward", w.shape(), x.shape()));
    }
    let mut dx = Tensor::zeros(x.shape());
    matvec_t_acc(w.data(), dy.data(), dx.data_mut());
    let mut dw = Tensor::zeros(w.shape());
    outer_acc(dy.data(), x.data(), dw.data_mut());
    Ok((dx, dw, dy.clone()))
}

fn check_affine<R: Real>(x: &Tensor<R>, w: &Tensor<R>, b: &Tensor<R>) -> Result<()> {
    if w.shape().len() != 2 || w.shape()[1] != x.len() {
        return Err(Error::dim("linear_affine", w.shape(), x.shape()));
    }
    if w.shape()[0] != b.len() {
        return Err(Error::dim("linear_affine", w.shape(), b.shape()));
    }
    Ok(())
}

/// Max-shifted softmax over a slice.
pub fn softmax_slice<R: Real>(z: &[R]) -> Result<Vec<R>> {
    if z.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let max = z.iter().copied().fold(R::neg_infinity(), R::max);
    let mut out: Vec<R> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: R = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

pub fn softmax<R: Real>(z: &Tensor<R>) -> Result<Tensor<R>> {
    Tensor::from_vec(z.shape(), softmax_slice(z.data())?)
}

pub fn logsumexp_slice<R: Real>(z: &[R]) -> Result<R> {
    if z.is_empty() {
        return Err(Error::Domain("logsumexp of an empty vector".into()));
    }
    let max = z.iter().copied().fold(R::neg_infinity(), R::max);
    if max == R::neg_infinity() {
        return Ok(max);
    }
    let s: R = z.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + s.ln())
}

pub fn logsumexp<R: Real>(z: &Tensor<R>) -> Result<R> {
    logsumexp_slice(z.data())
}

/// Central-difference gradient check. Returns the largest elementwise relative
/// error `|a - g| / max(|a|, |g|, 1e-8)` between the analytic gradient `a` and
/// the numeric estimate `g`.
pub fn finite_difference_check<F>(mut f: F, theta: &Tensor<f64>, analytic_grad: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    if step <= 0.0 {
        return Err(Error::Domain(format!("finite-difference step {step} must be > 0")));
    }
    if theta.shape() != analytic_grad.shape() {
        return Err(Error::dim(
            "finite_difference_check",
            theta.shape(),
            analytic_grad.shape(),
        ));
    }
    let mut probe = theta.clone();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::GradientCheck {
                index: i,
                msg: format!("non-finite objective (f+ = {plus}, f- = {minus})"),
            });
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic_grad.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
