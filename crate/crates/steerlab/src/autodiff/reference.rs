//! Naive 64-bit evaluation kernels.
//!
//! Straightforward nested loops over f64 slices, independent of the
//! vectorized f32 path. Test oracles and finite-difference probes build
//! on these; nothing here records a graph.

pub use super::kernels::Activation;

impl Activation {
    pub fn apply_f64(self, x: f64) -> f64 {
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
}

/// Valid-padding convolution; input `(c,h,w)`, weight `(o,c,kh,kw)`.
/// Returns the output buffer and its `(o, out_h, out_w)` dims.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    weight: &[f64],
    (o, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
) -> (Vec<f64>, (usize, usize, usize)) {
    let out_h = (h - kh) / stride + 1;
    let out_w = (w - kw) / stride + 1;
    let mut out = vec![0.0f64; o * out_h * out_w];
    for oc in 0..o {
        for i in 0..out_h {
            for j in 0..out_w {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for u in 0..kh {
                        for v in 0..kw {
                            acc += weight[((oc * c + ic) * kh + u) * kw + v]
                                * input[(ic * h + i * stride + u) * w + j * stride + v];
                        }
                    }
                }
                out[(oc * out_h + i) * out_w + j] = acc;
            }
        }
    }
    (out, (o, out_h, out_w))
}

pub fn dense(x: &[f64], weight: &[f64], bias: &[f64], m: usize, n: usize) -> Vec<f64> {
    (0..m)
        .map(|row| {
            let mut acc = bias[row];
            for col in 0..n {
                acc += weight[row * n + col] * x[col];
            }
            acc
        })
        .collect()
}

pub fn activation(x: &[f64], kind: Activation) -> Vec<f64> {
    x.iter().map(|&v| kind.apply_f64(v)).collect()
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

pub fn pad2d(x: &[f64], (c, h, w): (usize, usize, usize), pad: usize) -> (Vec<f64>, (usize, usize, usize)) {
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0f64; c * oh * ow];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[(ch * oh + i + pad) * ow + j + pad] = x[(ch * h + i) * w + j];
            }
        }
    }
    (out, (c, oh, ow))
}

pub fn global_avg_pool(x: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let area = (h * w) as f64;
    (0..c)
        .map(|ch| x[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / area)
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}
