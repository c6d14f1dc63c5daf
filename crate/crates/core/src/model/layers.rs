//! Dense layers, layer normalisation and GELU, each with a backward pass.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::params::{LayerNorm, Linear};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub fn linear(x: ArrayView2<f64>, l: &Linear) -> Array2<f64> {
    x.dot(&l.weight) + &l.bias
}

/// Accumulates weight and bias gradients into `g`; returns the input gradient.
pub fn linear_backward(x: ArrayView2<f64>, l: &Linear, dy: &Array2<f64>, g: &mut Linear) -> Array2<f64> {
    g.weight += &x.t().dot(dy);
    g.bias += &dy.sum_axis(Axis(0));
    dy.dot(&l.weight.t())
}

pub struct NormCache {
    /// Normalised input, before gain and bias.
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Row-wise layer normalisation.
pub fn layer_norm(x: &Array2<f64>, ln: &LayerNorm) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row *= *s;
    }
    let y = &xhat * &ln.gain + &ln.bias;
    (y, NormCache { xhat, inv_std })
}

pub fn layer_norm_backward(dy: &Array2<f64>, ln: &LayerNorm, cache: &NormCache, g: &mut LayerNorm) -> Array2<f64> {
    g.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0));
    let dxhat = dy * &ln.gain;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_dh = dh.sum() / d;
        let mean_dh_xh = dh.dot(&xh) / d;
        let s = cache.inv_std[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = s * (dh[j] - mean_dh - xh[j] * mean_dh_xh);
        }
    }
    dx
}

/// GELU, tanh approximation.
pub fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()))
}

pub fn gelu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
        let grad = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
        *d *= grad;
    });
    dx
}

/// Softmax over the entries of `logits` where `valid` holds; other entries
/// get probability zero.
pub fn masked_softmax(logits: &[f64], valid: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(valid)
        .map(|(&v, &ok)| if ok { (v - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Cross-entropy of `target` under softmax(`logits`) restricted to `valid`,
/// with the gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], valid: &[bool], target: usize) -> (f64, Vec<f64>) {
    let mut probs = masked_softmax(logits, valid);
    let loss = -probs[target].ln();
    probs[target] -= 1.0;
    (loss, probs)
}
