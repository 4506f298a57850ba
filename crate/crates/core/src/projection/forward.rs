use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use super::ProjectionParams;
use crate::rng::Rng;

pub const LN_EPS: f64 = 1e-5;

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Inverted-dropout multipliers (`0` or `1/(1-p)`) for both hidden blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub first: Array2<f64>,
    pub second: Array2<f64>,
}

impl DropoutMasks {
    pub fn sample(rng: &mut Rng, rows: usize, hidden: usize, rate: f64) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let mut draw = || {
            Array2::from_shape_simple_fn((rows, hidden), || {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
        };
        let first = draw();
        let second = draw();
        Self { first, second }
    }
}

/// Normalized activations of one LayerNorm call, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Intermediate activations of a batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub ln1: LayerNormCache,
    /// LayerNorm output feeding the first GELU.
    pub pre_act1: Array2<f64>,
    /// First block output after GELU and dropout.
    pub hidden1: Array2<f64>,
    pub ln2: LayerNormCache,
    pub pre_act2: Array2<f64>,
    pub hidden2: Array2<f64>,
    pub output: Array2<f64>,
}

fn layer_norm(
    x: &Array2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let width = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
        let mean = row.sum() / width;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
        *s = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *s);
    }
    let y = &xhat * gain + bias;
    (y, LayerNormCache { xhat, inv_std })
}

fn affine(x: ArrayView2<'_, f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

/// Runs the head on every row of `z`. `masks = None` is inference.
pub fn forward_batch(
    params: &ProjectionParams<f64>,
    z: ArrayView2<'_, f64>,
    masks: Option<&DropoutMasks>,
) -> ForwardCache {
    let a1 = affine(z, &params.w1, &params.b1);
    let (pre_act1, ln1) = layer_norm(&a1, &params.ln1_gain, &params.ln1_bias);
    let mut hidden1 = pre_act1.mapv(gelu);
    if let Some(m) = masks {
        hidden1 *= &m.first;
    }
    let a2 = affine(hidden1.view(), &params.w2, &params.b2);
    let (pre_act2, ln2) = layer_norm(&a2, &params.ln2_gain, &params.ln2_bias);
    let mut hidden2 = pre_act2.mapv(gelu);
    if let Some(m) = masks {
        hidden2 *= &m.second;
    }
    let output = affine(hidden2.view(), &params.w3, &params.b3);
    ForwardCache {
        ln1,
        pre_act1,
        hidden1,
        ln2,
        pre_act2,
        hidden2,
        output,
    }
}

/// Backward pass of a row-wise LayerNorm. Accumulates gain/bias gradients
/// and returns the gradient with respect to the normalization input.
pub(crate) fn layer_norm_backward(
    grad_out: &Array2<f64>,
    cache: &LayerNormCache,
    gain: &Array1<f64>,
    grad_gain: &mut Array1<f64>,
    grad_bias: &mut Array1<f64>,
) -> Array2<f64> {
    *grad_gain += &(grad_out * &cache.xhat).sum_axis(Axis(0));
    *grad_bias += &grad_out.sum_axis(Axis(0));
    let width = grad_out.ncols() as f64;
    let mut dxhat = grad_out * gain;
    for ((mut d, xhat), &s) in dxhat
        .outer_iter_mut()
        .zip(cache.xhat.outer_iter())
        .zip(cache.inv_std.iter())
    {
        let mean_d = d.sum() / width;
        let mean_dx = d.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / width;
        for (di, &xi) in d.iter_mut().zip(xhat.iter()) {
            *di = s * (*di - mean_d - xi * mean_dx);
        }
    }
    dxhat
}
