//! Forward and adjoint math for every recorded operator.
//!
//! Convolutions go through an explicit patch matrix (im2col) so the hot
//! loops are contiguous multiply-adds the compiler can vectorize.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Elementwise nonlinearity used between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Relu => x.max(0.0),
        }
    }

    fn derivative(self, x: f32) -> f32 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Argument(format!("unknown activation '{other}'"))),
        }
    }
}

/// Dot product with eight independent accumulator lanes so the loop
/// vectorizes; summation order is fixed, so results are deterministic.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
    let n = a.len().min(b.len());
    let chunks = n / LANES;
    let mut acc = [0.0f32; LANES];
    for i in 0..chunks {
        let pa = &a[i * LANES..(i + 1) * LANES];
        let pb = &b[i * LANES..(i + 1) * LANES];
        for l in 0..LANES {
            acc[l] += pa[l] * pb[l];
        }
    }
    let mut total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * LANES..n {
        total += a[i] * b[i];
    }
    total
}

/// Four simultaneous dot products against a shared left operand.
#[inline]
fn dot4(g: &[f32], c0: &[f32], c1: &[f32], c2: &[f32], c3: &[f32]) -> (f32, f32, f32, f32) {
    const LANES: usize = 8;
    let n = g.len();
    let chunks = n / LANES;
    let mut a0 = [0.0f32; LANES];
    let mut a1 = [0.0f32; LANES];
    let mut a2 = [0.0f32; LANES];
    let mut a3 = [0.0f32; LANES];
    for i in 0..chunks {
        let base = i * LANES;
        let gg = &g[base..base + LANES];
        let (p0, p1, p2, p3) = (
            &c0[base..base + LANES],
            &c1[base..base + LANES],
            &c2[base..base + LANES],
            &c3[base..base + LANES],
        );
        for l in 0..LANES {
            a0[l] += gg[l] * p0[l];
            a1[l] += gg[l] * p1[l];
            a2[l] += gg[l] * p2[l];
            a3[l] += gg[l] * p3[l];
        }
    }
    let fold = |a: &[f32; LANES]| ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
    let (mut t0, mut t1, mut t2, mut t3) = (fold(&a0), fold(&a1), fold(&a2), fold(&a3));
    for i in chunks * LANES..n {
        t0 += g[i] * c0[i];
        t1 += g[i] * c1[i];
        t2 += g[i] * c2[i];
        t3 += g[i] * c3[i];
    }
    (t0, t1, t2, t3)
}

/// Lane-accumulated sum; deterministic fixed order, vectorizable.
#[inline]
pub(crate) fn sum(a: &[f32]) -> f32 {
    const LANES: usize = 8;
    let chunks = a.len() / LANES;
    let mut acc = [0.0f32; LANES];
    for i in 0..chunks {
        let p = &a[i * LANES..(i + 1) * LANES];
        for l in 0..LANES {
            acc[l] += p[l];
        }
    }
    let mut total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for &v in &a[chunks * LANES..] {
        total += v;
    }
    total
}

pub(crate) struct ConvDims {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn conv_dims(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<ConvDims> {
    if stride == 0 {
        return Err(Error::Argument("conv2d stride must be positive".into()));
    }
    let (c, h, w) = match *input.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Dimension(format!(
                "conv2d input must be CxHxW, got {:?}",
                input.shape()
            )))
        }
    };
    let (o, wc, kh, kw) = match *weight.shape() {
        [o, wc, kh, kw] => (o, wc, kh, kw),
        _ => {
            return Err(Error::Dimension(format!(
                "conv2d weight must be OxCxKhxKw, got {:?}",
                weight.shape()
            )))
        }
    };
    if wc != c {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input has {c}, weight expects {wc}"
        )));
    }
    if bias.shape() != [o] {
        return Err(Error::Dimension(format!(
            "conv2d bias must have shape [{o}], got {:?}",
            bias.shape()
        )));
    }
    if kh > h || kw > w {
        return Err(Error::Dimension(format!(
            "conv2d kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    let out_h = (h - kh) / stride + 1;
    let out_w = (w - kw) / stride + 1;
    Ok(ConvDims {
        channels: c,
        in_h: h,
        in_w: w,
        out_ch: o,
        k_h: kh,
        k_w: kw,
        out_h,
        out_w,
    })
}

/// Patch matrix: rows are (c, u, v) kernel taps, columns are output positions.
fn im2col(input: &[f32], d: &ConvDims, stride: usize) -> Vec<f32> {
    let positions = d.out_h * d.out_w;
    let mut cols = vec![0.0f32; d.channels * d.k_h * d.k_w * positions];
    let mut row = 0usize;
    for c in 0..d.channels {
        let plane = &input[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for u in 0..d.k_h {
            for v in 0..d.k_w {
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for i in 0..d.out_h {
                    let src_row = &plane[(i * stride + u) * d.in_w..];
                    let out_row = &mut dst[i * d.out_w..(i + 1) * d.out_w];
                    if stride == 1 {
                        out_row.copy_from_slice(&src_row[v..v + d.out_w]);
                    } else {
                        for (j, slot) in out_row.iter_mut().enumerate() {
                            *slot = src_row[j * stride + v];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], d: &ConvDims, stride: usize) -> Vec<f32> {
    let positions = d.out_h * d.out_w;
    let mut input = vec![0.0f32; d.channels * d.in_h * d.in_w];
    let mut row = 0usize;
    for c in 0..d.channels {
        let plane = &mut input[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for u in 0..d.k_h {
            for v in 0..d.k_w {
                let src = &cols[row * positions..(row + 1) * positions];
                for i in 0..d.out_h {
                    let dst_row = &mut plane[(i * stride + u) * d.in_w..];
                    let src_row = &src[i * d.out_w..(i + 1) * d.out_w];
                    if stride == 1 {
                        for (dst, s) in dst_row[v..v + d.out_w].iter_mut().zip(src_row) {
                            *dst += s;
                        }
                    } else {
                        for (j, s) in src_row.iter().enumerate() {
                            dst_row[j * stride + v] += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    input
}

/// Valid-padding 2-D convolution: `out[o,i,j] = bias[o] + sum w[o,c,u,v] * x[c, i*s+u, j*s+v]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let d = conv_dims(input, weight, bias, stride)?;
    let positions = d.out_h * d.out_w;
    let taps = d.channels * d.k_h * d.k_w;
    let cols = im2col(input.data(), &d, stride);
    let w = weight.data();
    let b = bias.data();
    let mut out = vec![0.0f32; d.out_ch * positions];

    // Four output channels per pass so each patch row is read once per block.
    let mut rest = out.as_mut_slice();
    let mut o = 0;
    while o + 4 <= d.out_ch {
        let (block, tail) = rest.split_at_mut(4 * positions);
        rest = tail;
        let (p0, block) = block.split_at_mut(positions);
        let (p1, block) = block.split_at_mut(positions);
        let (p2, p3) = block.split_at_mut(positions);
        p0.fill(b[o]);
        p1.fill(b[o + 1]);
        p2.fill(b[o + 2]);
        p3.fill(b[o + 3]);
        for k in 0..taps {
            let col_row = &cols[k * positions..(k + 1) * positions];
            let w0 = w[o * taps + k];
            let w1 = w[(o + 1) * taps + k];
            let w2 = w[(o + 2) * taps + k];
            let w3 = w[(o + 3) * taps + k];
            for (((&c, a0), (a1, a2)), a3) in col_row
                .iter()
                .zip(p0.iter_mut())
                .zip(p1.iter_mut().zip(p2.iter_mut()))
                .zip(p3.iter_mut())
            {
                *a0 += w0 * c;
                *a1 += w1 * c;
                *a2 += w2 * c;
                *a3 += w3 * c;
            }
        }
        o += 4;
    }
    while o < d.out_ch {
        let (plane, tail) = rest.split_at_mut(positions);
        rest = tail;
        plane.fill(b[o]);
        let w_row = &w[o * taps..(o + 1) * taps];
        for (k, &wk) in w_row.iter().enumerate() {
            let col_row = &cols[k * positions..(k + 1) * positions];
            for (acc, &x) in plane.iter_mut().zip(col_row) {
                *acc += wk * x;
            }
        }
        o += 1;
    }
    Tensor::new(vec![d.out_ch, d.out_h, d.out_w], out)
}

/// Adjoint of `conv2d` w.r.t. input, weight and bias.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let bias_len = weight.shape()[0];
    let d = conv_dims(input, weight, &Tensor::zeros(vec![bias_len]), stride)
        .expect("shapes were validated on the forward pass");
    let positions = d.out_h * d.out_w;
    let taps = d.channels * d.k_h * d.k_w;
    let cols = im2col(input.data(), &d, stride);
    let w = weight.data();
    let g = grad_out.data();

    let mut d_bias = vec![0.0f32; d.out_ch];
    let mut d_weight = vec![0.0f32; d.out_ch * taps];
    let mut d_cols = vec![0.0f32; taps * positions];
    for o in 0..d.out_ch {
        let g_plane = &g[o * positions..(o + 1) * positions];
        d_bias[o] = sum(g_plane);
    }
    // Both backward GEMMs run per block of four output channels with k
    // innermost: the four gradient planes stay hot in L1 while the patch
    // matrix streams through exactly once per block.
    let plane = |o: usize| &g[o * positions..(o + 1) * positions];
    let mut o = 0;
    while o + 4 <= d.out_ch {
        let gp = [plane(o), plane(o + 1), plane(o + 2), plane(o + 3)];
        for k in 0..taps {
            let col_row = &cols[k * positions..(k + 1) * positions];
            let (d0, d1, d2, d3) = dot4(col_row, gp[0], gp[1], gp[2], gp[3]);
            d_weight[o * taps + k] = d0;
            d_weight[(o + 1) * taps + k] = d1;
            d_weight[(o + 2) * taps + k] = d2;
            d_weight[(o + 3) * taps + k] = d3;

            let d_col_row = &mut d_cols[k * positions..(k + 1) * positions];
            let wt: [f32; 4] = std::array::from_fn(|gi| w[(o + gi) * taps + k]);
            for (i, acc) in d_col_row.iter_mut().enumerate() {
                *acc += (wt[0] * gp[0][i] + wt[1] * gp[1][i])
                    + (wt[2] * gp[2][i] + wt[3] * gp[3][i]);
            }
        }
        o += 4;
    }
    while o < d.out_ch {
        let g_plane = plane(o);
        for k in 0..taps {
            let col_row = &cols[k * positions..(k + 1) * positions];
            d_weight[o * taps + k] = dot(g_plane, col_row);
            let wk = w[o * taps + k];
            let d_col_row = &mut d_cols[k * positions..(k + 1) * positions];
            for (acc, &gv) in d_col_row.iter_mut().zip(g_plane) {
                *acc += wk * gv;
            }
        }
        o += 1;
    }
    let d_input = col2im(&d_cols, &d, stride);

    (
        Tensor::new(input.shape().to_vec(), d_input).unwrap(),
        Tensor::new(weight.shape().to_vec(), d_weight).unwrap(),
        Tensor::new(vec![d.out_ch], d_bias).unwrap(),
    )
}

/// Fully connected layer: `out = weight . x + bias` for a length-N vector.
pub fn dense(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = match *x.shape() {
        [n] => n,
        _ => {
            return Err(Error::Dimension(format!(
                "dense input must be a vector, got {:?}",
                x.shape()
            )))
        }
    };
    let (m, wn) = match *weight.shape() {
        [m, wn] => (m, wn),
        _ => {
            return Err(Error::Dimension(format!(
                "dense weight must be MxN, got {:?}",
                weight.shape()
            )))
        }
    };
    if wn != n {
        return Err(Error::Dimension(format!(
            "dense inner dimensions disagree: weight {m}x{wn}, input {n}"
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::Dimension(format!(
            "dense bias must have shape [{m}], got {:?}",
            bias.shape()
        )));
    }
    let xv = x.data();
    let w = weight.data();
    let mut out = bias.data().to_vec();
    for (row, acc) in out.iter_mut().enumerate() {
        *acc += dot(&w[row * n..(row + 1) * n], xv);
    }
    Tensor::new(vec![m], out)
}

pub(crate) fn dense_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let n = x.len();
    let m = grad_out.len();
    let w = weight.data();
    let g = grad_out.data();
    let xv = x.data();

    let mut dx = vec![0.0f32; n];
    let mut dw = vec![0.0f32; m * n];
    for row in 0..m {
        let gv = g[row];
        let w_row = &w[row * n..(row + 1) * n];
        for (acc, &wv) in dx.iter_mut().zip(w_row) {
            *acc += gv * wv;
        }
        let dw_row = &mut dw[row * n..(row + 1) * n];
        for (slot, &v) in dw_row.iter_mut().zip(xv) {
            *slot = gv * v;
        }
    }
    (
        Tensor::new(vec![n], dx).unwrap(),
        Tensor::new(vec![m, n], dw).unwrap(),
        Tensor::new(vec![m], g.to_vec()).unwrap(),
    )
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let out = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

pub(crate) fn activation_backward(x: &Tensor, kind: Activation, grad_out: &Tensor) -> Tensor {
    let out = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| g * kind.derivative(v))
        .collect();
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

/// Mean squared error over equal-length tensors, as a scalar tensor.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "mse_loss shapes disagree: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Argument("mse_loss over zero elements".into()));
    }
    let n = pred.len() as f32;
    let mut acc = 0.0f32;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        acc += d * d;
    }
    Ok(Tensor::scalar(acc / n))
}

pub(crate) fn mse_backward(pred: &Tensor, target: &Tensor, grad_out: f32) -> Tensor {
    let n = pred.len() as f32;
    let scale = 2.0 * grad_out / n;
    let out = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| scale * (p - t))
        .collect();
    Tensor::new(pred.shape().to_vec(), out).unwrap()
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "add shapes disagree: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), out)
}

pub fn scale(x: &Tensor, k: f32) -> Tensor {
    let out = x.data().iter().map(|&v| k * v).collect();
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

/// Zero-pads the two trailing spatial dims of a CxHxW tensor by `pad` on every side.
pub fn pad2d(x: &Tensor, pad: usize) -> Result<Tensor> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Dimension(format!(
                "pad2d input must be CxHxW, got {:?}",
                x.shape()
            )))
        }
    };
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let src = x.data();
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for i in 0..h {
            let src_row = &src[(ch * h + i) * w..(ch * h + i + 1) * w];
            let base = (ch * oh + i + pad) * ow + pad;
            out[base..base + w].copy_from_slice(src_row);
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub(crate) fn pad2d_backward(in_shape: &[usize], pad: usize, grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let ow = w + 2 * pad;
    let oh = h + 2 * pad;
    let g = grad_out.data();
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for i in 0..h {
            let base = (ch * oh + i + pad) * ow + pad;
            out[(ch * h + i) * w..(ch * h + i + 1) * w].copy_from_slice(&g[base..base + w]);
        }
    }
    Tensor::new(in_shape.to_vec(), out).unwrap()
}

/// Mean over the spatial dims: CxHxW -> C.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Dimension(format!(
                "global_avg_pool input must be CxHxW, got {:?}",
                x.shape()
            )))
        }
    };
    let area = (h * w) as f32;
    let src = x.data();
    let out = (0..c)
        .map(|ch| src[ch * h * w..(ch + 1) * h * w].iter().sum::<f32>() / area)
        .collect();
    Tensor::new(vec![c], out)
}

pub(crate) fn global_avg_pool_backward(in_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let area = (h * w) as f32;
    let g = grad_out.data();
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        out[ch * h * w..(ch + 1) * h * w].fill(g[ch] / area);
    }
    Tensor::new(in_shape.to_vec(), out).unwrap()
}
