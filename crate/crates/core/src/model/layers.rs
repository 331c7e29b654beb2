//! Forward/backward kernels shared by the blocks.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis, Zip};

use super::params::{LayerNorm, Linear};
use crate::float::Scalar;

pub const LN_EPS: f64 = 1e-5;

pub fn linear<F: Scalar>(x: &ArrayView2<F>, lin: &Linear<F>) -> Array2<F> {
    let mut y = x.dot(&lin.w);
    y += &lin.b;
    y
}

/// Accumulates weight/bias gradients into `grad` and returns dL/dx.
pub fn linear_backward<F: Scalar>(
    x: &ArrayView2<F>,
    lin: &Linear<F>,
    dy: &Array2<F>,
    grad: &mut Linear<F>,
) -> Array2<F> {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), &mut grad.w);
    grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&lin.w.t())
}

pub struct NormCache<F> {
    xhat: Array2<F>,
    inv_std: Vec<F>,
}

pub fn layer_norm<F: Scalar>(x: &Array2<F>, ln: &LayerNorm<F>) -> (Array2<F>, NormCache<F>) {
    let d = F::from_usize(x.ncols()).unwrap();
    let eps = F::from_f64c(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| *v * *v).sum::<F>() / d;
        let inv = F::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * inv);
        inv_std.push(inv);
    }
    let mut y = &xhat * &ln.gain;
    y += &ln.bias;
    (y, NormCache { xhat, inv_std })
}

pub fn layer_norm_backward<F: Scalar>(
    cache: &NormCache<F>,
    ln: &LayerNorm<F>,
    dy: &Array2<F>,
    grad: &mut LayerNorm<F>,
) -> Array2<F> {
    grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d = F::from_usize(dy.ncols()).unwrap();
    let mut dx = dy * &ln.gain;
    for ((mut row, xh), inv) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
        let sum = row.sum();
        let dot = row.iter().zip(xh).map(|(a, b)| *a * *b).sum::<F>();
        Zip::from(&mut row).and(&xh).for_each(|g, &xv| {
            *g = *inv * (*g * d - sum - xv * dot) / d;
        });
    }
    dx
}

const GELU_A: f64 = 0.044715;

/// `0.5 (1 + tanh(y))`, written as a logistic in `2y`, which is cheaper.
#[inline]
fn half_one_plus_tanh<F: Scalar>(y: F) -> F {
    F::one() / (F::one() + (-(y + y)).exp())
}

/// Tanh approximation of GELU.
pub fn gelu<F: Scalar>(u: &Array2<F>) -> Array2<F> {
    let c = F::from_f64c((2.0 / std::f64::consts::PI).sqrt());
    let a = F::from_f64c(GELU_A);
    u.mapv(|x| x * half_one_plus_tanh(c * (x + a * x * x * x)))
}

pub fn gelu_backward<F: Scalar>(u: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let c = F::from_f64c((2.0 / std::f64::consts::PI).sqrt());
    let a = F::from_f64c(GELU_A);
    let two = F::from_f64c(2.0);
    let three = F::from_f64c(3.0);
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(u).for_each(|g, &x| {
        let s = half_one_plus_tanh(c * (x + a * x * x * x));
        // d/dy of s is 2 s (1 - s).
        let ds = two * s * (F::one() - s) * c * (F::one() + three * a * x * x);
        *g = *g * (s + x * ds);
    });
    dx
}

/// Row-wise softmax in place.
pub fn softmax_rows<F: Scalar>(x: &mut Array2<F>) {
    for mut row in x.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, v| m.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}
