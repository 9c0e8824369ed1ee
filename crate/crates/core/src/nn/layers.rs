use rand::Rng;

use super::tensor::{Real, Tensor};
use super::NnRng;
use crate::error::{Error, Result};

pub(crate) const KSIZE: usize = 3;
const KAREA: usize = KSIZE * KSIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// 3×3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    /// `out_ch × in_ch × 3 × 3`
    pub kernels: Tensor<T>,
    /// `out_ch`
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(kernels: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let s = kernels.shape();
        if s.len() != 4 || s[2] != KSIZE || s[3] != KSIZE {
            return Err(Error::Shape(format!("conv kernels must be out×in×3×3, got {s:?}")));
        }
        bias.expect_shape(&[s[0]], "conv bias")?;
        Ok(Self { kernels, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    fn col_width(&self) -> usize {
        self.in_channels() * KAREA
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

fn hwc(input: &Tensor<impl Real>, what: &str) -> Result<(usize, usize, usize)> {
    match *input.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::Shape(format!("{what}: expected H×W×C tensor, got {s:?}"))),
    }
}

/// Unfolds an H×W×C input into `(H·W) × (C·9)` patches; column index is
/// `ci·9 + kh·3 + kw`, matching the kernel layout.
pub(crate) fn im2col<T: Real>(x: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let width = c * KAREA;
    let mut cols = vec![T::zero(); h * w * width];
    for i in 0..h {
        for j in 0..w {
            let row = &mut cols[(i * w + j) * width..][..width];
            for kh in 0..KSIZE {
                let si = i + kh;
                if si < 1 || si > h {
                    continue;
                }
                for kw in 0..KSIZE {
                    let sj = j + kw;
                    if sj < 1 || sj > w {
                        continue;
                    }
                    let src = &x[((si - 1) * w + (sj - 1)) * c..][..c];
                    for (ci, &v) in src.iter().enumerate() {
                        row[ci * KAREA + kh * KSIZE + kw] = v;
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let width = c * KAREA;
    let mut x = vec![T::zero(); h * w * c];
    for i in 0..h {
        for j in 0..w {
            let row = &cols[(i * w + j) * width..][..width];
            for kh in 0..KSIZE {
                let si = i + kh;
                if si < 1 || si > h {
                    continue;
                }
                for kw in 0..KSIZE {
                    let sj = j + kw;
                    if sj < 1 || sj > w {
                        continue;
                    }
                    let dst = &mut x[((si - 1) * w + (sj - 1)) * c..][..c];
                    for (ci, d) in dst.iter_mut().enumerate() {
                        *d += row[ci * KAREA + kh * KSIZE + kw];
                    }
                }
            }
        }
    }
    x
}

/// Forward pass over precomputed patches; writes `(H·W) × out_ch`.
pub(crate) fn conv_forward_cols<T: Real>(cols: &[T], pixels: usize, layer: &ConvLayer<T>) -> Vec<T> {
    let (k, n) = (layer.col_width(), layer.out_channels());
    let mut out = Vec::with_capacity(pixels * n);
    for _ in 0..pixels {
        out.extend_from_slice(layer.bias.data());
    }
    // Kernels are out×k row-major, read as a k×out matrix through strides.
    T::gemm_raw(pixels, k, n, T::one(), cols, k, 1, layer.kernels.data(), 1, k, T::one(), &mut out, n, 1);
    out
}

/// Accumulates kernel and bias gradients into `gk`/`gb`; returns the input
/// gradient when `want_input` is set.
pub(crate) fn conv_backward_cols<T: Real>(
    grad_out: &[T],
    cols: &[T],
    layer: &ConvLayer<T>,
    (h, w): (usize, usize),
    gk: &mut [T],
    gb: &mut [T],
    want_input: bool,
) -> Option<Vec<T>> {
    let (k, n, p) = (layer.col_width(), layer.out_channels(), h * w);
    for px in grad_out.chunks_exact(n) {
        for (b, &g) in gb.iter_mut().zip(px) {
            *b += g;
        }
    }
    // gk[co, k] += Σ_p G[p, co] · cols[p, k]
    T::gemm_raw(n, p, k, T::one(), grad_out, 1, n, cols, k, 1, T::one(), gk, k, 1);
    want_input.then(|| {
        let mut gcols = vec![T::zero(); p * k];
        T::gemm_raw(p, n, k, T::one(), grad_out, n, 1, layer.kernels.data(), k, 1, T::zero(), &mut gcols, k, 1);
        col2im(&gcols, h, w, layer.in_channels())
    })
}

/// `Y(i,j,co) = Σ X(i+m-1, j+n-1, ci)·W(co,ci,m,n) + b(co)` with zeros
/// outside the input; output keeps the input's spatial size.
pub fn conv2d_forward<T: Real>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(input, "conv2d input")?;
    if c != layer.in_channels() {
        return Err(Error::Shape(format!("conv2d: input has {c} channels, layer expects {}", layer.in_channels())));
    }
    if h < KSIZE || w < KSIZE {
        return Err(Error::Shape(format!("conv2d: spatial size {h}×{w} below 3×3")));
    }
    let cols = im2col(input.data(), h, w, c);
    Tensor::from_vec(&[h, w, layer.out_channels()], conv_forward_cols(&cols, h * w, layer))
}

pub fn conv2d_backward<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<ConvGrads<T>> {
    let (h, w, c) = hwc(input, "conv2d input")?;
    if c != layer.in_channels() {
        return Err(Error::Shape("conv2d backward: channel mismatch".into()));
    }
    grad_out.expect_shape(&[h, w, layer.out_channels()], "conv2d grad_out")?;
    let cols = im2col(input.data(), h, w, c);
    let mut gk = Tensor::zeros(layer.kernels.shape());
    let mut gb = Tensor::zeros(layer.bias.shape());
    let gi = conv_backward_cols(grad_out.data(), &cols, layer, (h, w), gk.data_mut(), gb.data_mut(), true)
        .expect("input gradient requested");
    Ok(ConvGrads { input: Tensor::from_vec(&[h, w, c], gi)?, kernels: gk, bias: gb })
}

/// 2×2 max pooling, stride 2. Returns the pooled tensor and, per output
/// cell, the flat input index that won (first maximum in row-major order).
pub fn maxpool_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (h, w, c) = hwc(input, "maxpool input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool needs even spatial dims, got {h}×{w}")));
    }
    let (out, idx) = maxpool_raw(input.data(), h, w, c);
    Ok((Tensor::from_vec(&[h / 2, w / 2, c], out)?, idx))
}

pub(crate) fn maxpool_raw<T: Real>(x: &[T], h: usize, w: usize, c: usize) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut idx = Vec::with_capacity(oh * ow * c);
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let mut best = ((2 * i) * w + 2 * j) * c + ch;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let at = ((2 * i + di) * w + 2 * j + dj) * c + ch;
                    if x[at] > x[best] {
                        best = at;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

pub(crate) fn maxpool_backward_raw<T: Real>(grad_out: &[T], argmax: &[usize], input_len: usize) -> Vec<T> {
    let mut g = vec![T::zero(); input_len];
    for (&gv, &at) in grad_out.iter().zip(argmax) {
        g[at] += gv;
    }
    g
}

/// Routes each output gradient back to the input position that won the
/// forward max.
pub fn maxpool_backward<T: Real>(grad_out: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    let &[h, w, c] = input_shape else {
        return Err(Error::Shape(format!("maxpool input shape must be H×W×C, got {input_shape:?}")));
    };
    grad_out.expect_shape(&[h / 2, w / 2, c], "maxpool grad_out")?;
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape("maxpool backward: argmax length mismatch".into()));
    }
    if argmax.iter().any(|&i| i >= h * w * c) {
        return Err(Error::Shape("maxpool backward: argmax index out of range".into()));
    }
    Tensor::from_vec(input_shape, maxpool_backward_raw(grad_out.data(), argmax, h * w * c))
}

/// `y = φ(W·x + b)` with `W` of shape `out × in`.
pub fn fc_forward<T: Real>(x: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>, act: Activation) -> Result<Tensor<T>> {
    let &[out, inner] = weights.shape() else {
        return Err(Error::Shape(format!("fc weights must be 2-D, got {:?}", weights.shape())));
    };
    if x.len() != inner {
        return Err(Error::Shape(format!("fc: input length {} but weights expect {inner}", x.len())));
    }
    bias.expect_shape(&[out], "fc bias")?;
    let mut y = bias.data().to_vec();
    T::gemm_raw(1, inner, out, T::one(), x.data(), inner, 1, weights.data(), 1, inner, T::one(), &mut y, out, 1);
    if act == Activation::Relu {
        relu_in_place(&mut y);
    }
    Tensor::from_vec(&[out], y)
}

pub(crate) fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes gradients where the ReLU output was not positive.
pub(crate) fn relu_backward_in_place<T: Real>(grad: &mut [T], activated: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Inverted dropout. The mask holds the per-element multiplier (0 or
/// `1/(1-rate)`); eval mode is the identity with an all-ones mask.
pub fn dropout<T: Real>(x: &Tensor<T>, rate: f64, mode: Mode, rng: &mut NnRng) -> Result<(Tensor<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0,1), got {rate}")));
    }
    let mask = dropout_mask(x.len(), rate, mode, rng);
    let y = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::from_vec(x.shape(), y)?, mask))
}

pub(crate) fn dropout_mask<T: Real>(len: usize, rate: f64, mode: Mode, rng: &mut NnRng) -> Vec<T> {
    if mode == Mode::Eval || rate == 0.0 {
        return vec![T::one(); len];
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect()
}

/// Numerically stable softmax (max subtracted first), evaluated in f64.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label` plus `λ·Σ‖W‖²`.
/// The returned gradient is with respect to the logits only.
pub fn loss_ce_l2<T: Real>(logits: &[T], label: usize, lambda: f64, weights: &[&Tensor<T>]) -> Result<(f64, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, classes: logits.len() });
    }
    if lambda < 0.0 {
        return Err(Error::Config(format!("L2 coefficient must be non-negative, got {lambda}")));
    }
    let (ce, grad) = cross_entropy(logits, label);
    let l2: f64 = weights.iter().map(|w| w.sum_squares()).sum();
    Ok((ce + lambda * l2, grad))
}

pub(crate) fn cross_entropy<T: Real>(logits: &[T], label: usize) -> (f64, Vec<T>) {
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|v| v.as_f64() - max).collect();
    let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    let loss = log_z - shifted[label];
    let grad = shifted
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let p = (s - log_z).exp();
            T::lit(if k == label { p - 1.0 } else { p })
        })
        .collect();
    (loss, grad)
}
