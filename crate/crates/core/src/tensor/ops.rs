use rayon::prelude::*;

use crate::error::ensure;
use crate::Result;

use super::{Matrix, Scalar};

/// Below this many multiply-adds a product runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 18;

/// `a × b`.
///
/// Each output element accumulates `a[i,p] * b[p,j]` for `p = 0, 1, ...` in
/// that order, starting from zero. Work is split across output rows only, so
/// the result is bitwise identical to the naive triple loop regardless of the
/// number of threads.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    ensure!(a.cols() == b.rows(), "matmul: {}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols());
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![T::zero(); m * n];
    if m == 0 || n == 0 {
        return Matrix::from_vec(m, n, out);
    }
    let lhs = a.as_slice();
    let rhs = b.as_slice();
    let kernel = |(i, out_row): (usize, &mut [T])| {
        let a_row = &lhs[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &rhs[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(kernel);
    } else {
        out.chunks_mut(n).enumerate().for_each(kernel);
    }
    Matrix::from_vec(m, n, out)
}

/// `a × bᵀ`, the layout used by `x · Wᵀ` with `W` stored `[out × in]`.
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    ensure!(a.cols() == b.cols(), "matmul_nt: {}x{} times ({}x{})ᵀ", a.rows(), a.cols(), b.rows(), b.cols());
    matmul(a, &b.transpose())
}

/// `aᵀ × b`, the layout of weight gradients `δᵀ · x`.
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    ensure!(a.rows() == b.rows(), "matmul_tn: ({}x{})ᵀ times {}x{}", a.rows(), a.cols(), b.rows(), b.cols());
    matmul(&a.transpose(), b)
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax_rows<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let mut out = a.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// `(x − mean) / sqrt(var + eps) · γ + β` with population variance.
pub fn layer_norm<T: Scalar>(x: &[T], gamma: &[T], beta: Option<&[T]>, eps: f64) -> Result<Vec<T>> {
    ensure!(
        gamma.len() == x.len() && beta.is_none_or(|b| b.len() == x.len()),
        "layer_norm: lengths differ (x {}, gamma {}, beta {:?})",
        x.len(),
        gamma.len(),
        beta.map(|b| b.len())
    );
    ensure!(eps > 0.0, "layer_norm: eps must be positive");
    let mut out = vec![T::zero(); x.len()];
    layer_norm_into(x, gamma, beta, T::of(eps), &mut out);
    Ok(out)
}

/// Mean and `1 / sqrt(var + eps)` of a row, reduced in ascending order.
#[inline]
pub(crate) fn layer_norm_stats<T: Scalar>(x: &[T], eps: T) -> (T, T) {
    let n = T::of(x.len() as f64);
    let mut sum = T::zero();
    for &v in x {
        sum += v;
    }
    let mean = sum / n;
    let mut sq = T::zero();
    for &v in x {
        let d = v - mean;
        sq += d * d;
    }
    (mean, T::one() / (sq / n + eps).sqrt())
}

fn layer_norm_into<T: Scalar>(x: &[T], gamma: &[T], beta: Option<&[T]>, eps: T, out: &mut [T]) {
    let (mean, rstd) = layer_norm_stats(x, eps);
    for (i, o) in out.iter_mut().enumerate() {
        let y = (x[i] - mean) * rstd * gamma[i];
        *o = match beta {
            Some(b) => y + b[i],
            None => y,
        };
    }
}

/// `x · γ / sqrt(mean(x²) + eps)`.
pub fn rms_norm<T: Scalar>(x: &[T], gamma: &[T], eps: f64) -> Result<Vec<T>> {
    ensure!(gamma.len() == x.len(), "rms_norm: lengths differ (x {}, gamma {})", x.len(), gamma.len());
    ensure!(eps > 0.0, "rms_norm: eps must be positive");
    let mut out = vec![T::zero(); x.len()];
    rms_norm_into(x, gamma, T::of(eps), &mut out);
    Ok(out)
}

/// `1 / sqrt(mean(x²) + eps)` of a row.
#[inline]
pub(crate) fn rms_stats<T: Scalar>(x: &[T], eps: T) -> T {
    let n = T::of(x.len() as f64);
    let mut sq = T::zero();
    for &v in x {
        sq += v * v;
    }
    T::one() / (sq / n + eps).sqrt()
}

fn rms_norm_into<T: Scalar>(x: &[T], gamma: &[T], eps: T, out: &mut [T]) {
    let r = rms_stats(x, eps);
    for (i, o) in out.iter_mut().enumerate() {
        *o = x[i] * r * gamma[i];
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximation GELU.
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

/// Derivative of [`gelu_scalar`].
#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let x2 = x * x;
    let t = (c * (x + a * x2 * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x2)
}

pub fn gelu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(gelu_scalar)
}
