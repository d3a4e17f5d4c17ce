//! Building blocks with explicit forward/backward passes.
//!
//! Everything is f64 over `ndarray::Array2`; parameters that are
//! logically vectors are stored as (1, n) matrices so optimizer and
//! checkpoint code handle a single shape. Backward methods accumulate
//! into a gradient holder of the same type as the layer.

use ndarray::{Array2, Axis};

use crate::rng::Rng;
use rand::Rng as _;

pub const LN_EPS: f64 = 1e-5;

/// Draw from N(0, std^2) via Box-Muller.
pub fn sample_normal(rng: &mut Rng, std: f64) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// y = x W (+ b). W is (d_in, d_out); b, when present, is (1, d_out).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Option<Array2<f64>>,
}

impl Linear {
    /// Fan-in scaled uniform init for W, zero bias.
    pub fn init(d_in: usize, d_out: usize, bias: bool, rng: &mut Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = Array2::from_shape_fn((d_in, d_out), |_| rng.random_range(-bound..bound));
        let b = bias.then(|| Array2::zeros((1, d_out)));
        Linear { w, b }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            w: Array2::zeros(self.w.raw_dim()),
            b: self.b.as_ref().map(|b| Array2::zeros(b.raw_dim())),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        if let Some(b) = &self.b {
            y += b;
        }
        y
    }

    /// Accumulates dW/db into `grad` and returns dX.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        if let Some(gb) = grad.b.as_mut() {
            *gb += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dy.dot(&self.w.t())
    }
}

/// Standard layer normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
}

pub struct LnCache {
    x_hat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn init(d: usize) -> Self {
        LayerNorm { gamma: Array2::ones((1, d)), beta: Array2::zeros((1, d)) }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNorm {
            gamma: Array2::zeros(self.gamma.raw_dim()),
            beta: Array2::zeros(self.beta.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let (rows, d) = x.dim();
        let mut x_hat = Array2::zeros((rows, d));
        let mut inv_std = Vec::with_capacity(rows);
        let mut y = Array2::zeros((rows, d));
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(istd);
            for c in 0..d {
                let xh = (row[c] - mean) * istd;
                x_hat[(r, c)] = xh;
                y[(r, c)] = self.gamma[(0, c)] * xh + self.beta[(0, c)];
            }
        }
        (y, LnCache { x_hat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LnCache,
        dy: &Array2<f64>,
        grad: &mut LayerNorm,
    ) -> Array2<f64> {
        let (rows, d) = dy.dim();
        let mut dx = Array2::zeros((rows, d));
        for r in 0..rows {
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for c in 0..d {
                let g = dy[(r, c)];
                let xh = cache.x_hat[(r, c)];
                grad.gamma[(0, c)] += g * xh;
                grad.beta[(0, c)] += g;
                let dxh = g * self.gamma[(0, c)];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xh;
            }
            mean_dxhat /= d as f64;
            mean_dxhat_xhat /= d as f64;
            let istd = cache.inv_std[r];
            for c in 0..d {
                let dxh = dy[(r, c)] * self.gamma[(0, c)];
                dx[(r, c)] =
                    istd * (dxh - mean_dxhat - cache.x_hat[(r, c)] * mean_dxhat_xhat);
            }
        }
        dx
    }
}

/// tanh-approximation GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Rotate even/odd column pairs of `x` (rows are positions) by the
/// rotary angle for each row's position. `inverse` applies the opposite
/// rotation, used in backward.
pub fn apply_rope(x: &mut Array2<f64>, positions: &[usize], base: f64, inverse: bool) {
    let (rows, d) = x.dim();
    debug_assert_eq!(rows, positions.len());
    debug_assert_eq!(d % 2, 0);
    for r in 0..rows {
        let pos = positions[r] as f64;
        for i in 0..d / 2 {
            let theta = pos * base.powf(-(2.0 * i as f64) / d as f64);
            let (sin, cos) = if inverse { (-theta.sin(), theta.cos()) } else { (theta.sin(), theta.cos()) };
            let a = x[(r, 2 * i)];
            let b = x[(r, 2 * i + 1)];
            x[(r, 2 * i)] = a * cos - b * sin;
            x[(r, 2 * i + 1)] = a * sin + b * cos;
        }
    }
}

/// Row softmax in place over entries allowed by `allowed`; disallowed
/// entries get exactly 0. Rows with no allowed entries become all-zero.
pub fn masked_softmax_rows(scores: &mut Array2<f64>, allowed: impl Fn(usize, usize) -> bool) {
    let (rows, cols) = scores.dim();
    for r in 0..rows {
        let mut max = f64::NEG_INFINITY;
        for c in 0..cols {
            if allowed(r, c) {
                max = max.max(scores[(r, c)]);
            }
        }
        if max == f64::NEG_INFINITY {
            for c in 0..cols {
                scores[(r, c)] = 0.0;
            }
            continue;
        }
        let mut sum = 0.0;
        for c in 0..cols {
            if allowed(r, c) {
                let e = (scores[(r, c)] - max).exp();
                scores[(r, c)] = e;
                sum += e;
            } else {
                scores[(r, c)] = 0.0;
            }
        }
        for c in 0..cols {
            scores[(r, c)] /= sum;
        }
    }
}

/// Backward of a row softmax: dS = W o (dW - rowsum(dW o W)).
/// Masked entries have weight 0 and therefore gradient 0.
pub fn softmax_rows_backward(weights: &Array2<f64>, dweights: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = weights.dim();
    let mut ds = Array2::zeros((rows, cols));
    for r in 0..rows {
        let dot: f64 = (0..cols).map(|c| weights[(r, c)] * dweights[(r, c)]).sum();
        for c in 0..cols {
            ds[(r, c)] = weights[(r, c)] * (dweights[(r, c)] - dot);
        }
    }
    ds
}

/// Inverted dropout mask: entries are 0 with probability `rate`, else
/// 1/(1-rate).
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut Rng) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep }
    })
}
