//! Reverse-mode tape. A [`Graph`] records each forward operation in
//! append order; [`Graph::backward`] walks the record once in reverse.
//!
//! Graphs are single-writer and cheap to build, so batched training gives
//! every sample its own graph and merges the resulting gradients.

use super::kernels::{self, Activation};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// A tensor tracked on a graph.
#[derive(Clone, Debug)]
pub struct Var {
    id: NodeId,
    value: Tensor,
}

impl Var {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        x: Tensor,
        w: Tensor,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        x: Tensor,
        w: Tensor,
    },
    Activation {
        input: NodeId,
        kind: Activation,
        x: Tensor,
    },
    Add {
        lhs: NodeId,
        rhs: NodeId,
    },
    Scale {
        input: NodeId,
        k: f32,
    },
    Reshape {
        input: NodeId,
        in_shape: Vec<usize>,
    },
    Pad2d {
        input: NodeId,
        pad: usize,
        in_shape: Vec<usize>,
    },
    GlobalAvgPool {
        input: NodeId,
        in_shape: Vec<usize>,
    },
    MseLoss {
        pred: NodeId,
        p: Tensor,
        t: Tensor,
    },
}

struct Node {
    op: Op,
    out_shape: Vec<usize>,
}

/// Append-only operation record for one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            out_shape: value.shape().to_vec(),
        });
        Var { id, value }
    }

    /// Registers a tensor as a differentiable input of this graph.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.clone())
    }

    pub fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, stride: usize) -> Result<Var> {
        let out = kernels::conv2d(&x.value, &w.value, &b.value, stride)?;
        Ok(self.push(
            Op::Conv2d {
                input: x.id,
                weight: w.id,
                bias: b.id,
                stride,
                x: x.value.clone(),
                w: w.value.clone(),
            },
            out,
        ))
    }

    pub fn dense(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let out = kernels::dense(&x.value, &w.value, &b.value)?;
        Ok(self.push(
            Op::Dense {
                input: x.id,
                weight: w.id,
                bias: b.id,
                x: x.value.clone(),
                w: w.value.clone(),
            },
            out,
        ))
    }

    pub fn activation(&mut self, x: &Var, kind: Activation) -> Var {
        let out = kernels::activation(&x.value, kind);
        self.push(
            Op::Activation {
                input: x.id,
                kind,
                x: x.value.clone(),
            },
            out,
        )
    }

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = kernels::add(&a.value, &b.value)?;
        Ok(self.push(Op::Add { lhs: a.id, rhs: b.id }, out))
    }

    pub fn scale(&mut self, x: &Var, k: f32) -> Var {
        let out = kernels::scale(&x.value, k);
        self.push(Op::Scale { input: x.id, k }, out)
    }

    pub fn reshape(&mut self, x: &Var, shape: Vec<usize>) -> Result<Var> {
        let out = x.value.reshaped(shape)?;
        Ok(self.push(
            Op::Reshape {
                input: x.id,
                in_shape: x.value.shape().to_vec(),
            },
            out,
        ))
    }

    pub fn pad2d(&mut self, x: &Var, pad: usize) -> Result<Var> {
        let out = kernels::pad2d(&x.value, pad)?;
        Ok(self.push(
            Op::Pad2d {
                input: x.id,
                pad,
                in_shape: x.value.shape().to_vec(),
            },
            out,
        ))
    }

    pub fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        let out = kernels::global_avg_pool(&x.value)?;
        Ok(self.push(
            Op::GlobalAvgPool {
                input: x.id,
                in_shape: x.value.shape().to_vec(),
            },
            out,
        ))
    }

    /// MSE against a constant (non-differentiated) target.
    pub fn mse_loss(&mut self, pred: &Var, target: &Tensor) -> Result<Var> {
        let out = kernels::mse_loss(&pred.value, target)?;
        Ok(self.push(
            Op::MseLoss {
                pred: pred.id,
                p: pred.value.clone(),
                t: target.clone(),
            },
            out,
        ))
    }

    /// Gradients of a tracked scalar w.r.t. every tensor recorded on this
    /// graph, leaves included. Visits each node exactly once, in reverse
    /// append order.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        let NodeId(root) = loss.id;
        if root >= self.nodes.len() {
            return Err(Error::Untracked(
                "loss does not belong to this graph".into(),
            ));
        }
        if self.nodes[root].out_shape.iter().product::<usize>() != 1 {
            return Err(Error::Untracked(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[root].out_shape
            )));
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(g_out) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g_out);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    x,
                    w,
                } => {
                    let (dx, dw, db) = kernels::conv2d_backward(x, w, *stride, &g_out);
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Dense {
                    input,
                    weight,
                    bias,
                    x,
                    w,
                } => {
                    let (dx, dw, db) = kernels::dense_backward(x, w, &g_out);
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Activation { input, kind, x } => {
                    accumulate(&mut grads, *input, kernels::activation_backward(x, *kind, &g_out));
                }
                Op::Add { lhs, rhs } => {
                    accumulate(&mut grads, *lhs, g_out.clone());
                    accumulate(&mut grads, *rhs, g_out);
                }
                Op::Scale { input, k } => {
                    accumulate(&mut grads, *input, kernels::scale(&g_out, *k));
                }
                Op::Reshape { input, in_shape } => {
                    accumulate(&mut grads, *input, g_out.reshaped(in_shape.clone())?);
                }
                Op::Pad2d {
                    input,
                    pad,
                    in_shape,
                } => {
                    accumulate(&mut grads, *input, kernels::pad2d_backward(in_shape, *pad, &g_out));
                }
                Op::GlobalAvgPool { input, in_shape } => {
                    accumulate(
                        &mut grads,
                        *input,
                        kernels::global_avg_pool_backward(in_shape, &g_out),
                    );
                }
                Op::MseLoss { pred, p, t } => {
                    let g = g_out.item()?;
                    accumulate(&mut grads, *pred, kernels::mse_backward(p, t, g));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], NodeId(idx): NodeId, delta: Tensor) {
    match &mut grads[idx] {
        Some(existing) => {
            for (acc, &d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *acc += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Gradient table produced by [`Graph::backward`], keyed by node handle.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient w.r.t. `var`; `None` when the loss does not depend on it.
    pub fn wrt(&self, var: &Var) -> Option<&Tensor> {
        self.grads.get(var.id.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::wrt`] but substitutes zeros for unreachable tensors.
    pub fn wrt_or_zero(&self, var: &Var) -> Tensor {
        self.wrt(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value.shape().to_vec()))
    }
}

/// A scalar-valued tensor function with two evaluation routes: the f32
/// tape (what training uses) and an independent 64-bit reference (what
/// finite-difference oracles probe).
pub trait ScalarFn {
    fn tracked(&self, g: &mut Graph, x: &Var) -> Result<Var>;
    fn reference(&self, x: &[f64]) -> Result<f64>;
}

impl<T, R> ScalarFn for (T, R)
where
    T: Fn(&mut Graph, &Var) -> Result<Var>,
    R: Fn(&[f64]) -> Result<f64>,
{
    fn tracked(&self, g: &mut Graph, x: &Var) -> Result<Var> {
        (self.0)(g, x)
    }

    fn reference(&self, x: &[f64]) -> Result<f64> {
        (self.1)(x)
    }
}

/// Max over components of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
/// where `analytic` comes from the tape and `numeric` from 64-bit central
/// differences of the reference route.
pub fn grad_check(f: &dyn ScalarFn, x: &Tensor, epsilon: f64) -> Result<f64> {
    let mut graph = Graph::new();
    let leaf = graph.leaf(x);
    let out = f.tracked(&mut graph, &leaf)?;
    if out.value().len() != 1 {
        return Err(Error::Argument(
            "grad_check requires a scalar-valued function".into(),
        ));
    }
    let grads = graph.backward(&out)?;
    let analytic = grads.wrt_or_zero(&leaf);

    let mut probe: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let (a, rel) = grad_check_component(f, &mut probe, analytic.data()[i], i, epsilon)?;
        let _ = a;
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Single-component central difference against the analytic value;
/// returns `(numeric, relative_error)`. `probe` is restored on return.
pub fn grad_check_component(
    f: &dyn ScalarFn,
    probe: &mut [f64],
    analytic: f32,
    index: usize,
    epsilon: f64,
) -> Result<(f64, f64)> {
    let base = probe[index];
    probe[index] = base + epsilon;
    let plus = f.reference(probe)?;
    probe[index] = base - epsilon;
    let minus = f.reference(probe)?;
    probe[index] = base;
    let numeric = (plus - minus) / (2.0 * epsilon);
    let a = analytic as f64;
    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
    Ok((numeric, rel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{kernels, reference};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn mse_gradient_closed_form() {
        // loss = mse(x, 0) with x=[2] -> d/dx = 2*2/1 = 4
        let x = Tensor::new(vec![1], vec![2.0]).unwrap();
        let mut g = Graph::new();
        let xv = g.leaf(&x);
        let loss = g.mse_loss(&xv, &Tensor::zeros(vec![1])).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&xv).unwrap().data(), &[4.0]);
    }

    #[test]
    fn identity_dense_against_itself_has_zero_gradient() {
        let x = Tensor::new(vec![2], vec![3.0, -1.0]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero = Tensor::zeros(vec![2]);
        let mut g = Graph::new();
        let xv = g.leaf(&x);
        let wv = g.leaf(&eye);
        let bv = g.leaf(&zero);
        let y = g.dense(&xv, &wv, &bv).unwrap();
        let loss = g.mse_loss(&y, &x).unwrap();
        let grads = g.backward(&loss).unwrap();
        for v in [&xv, &wv, &bv] {
            for &c in grads.wrt_or_zero(v).data() {
                assert_eq!(c, 0.0);
            }
        }
    }

    #[test]
    fn backward_rejects_untracked_and_nonscalar() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::zeros(vec![2]));
        assert!(matches!(g.backward(&x), Err(Error::Untracked(_))));

        let other = Graph::new();
        let mut g2 = Graph::new();
        let y = g2.leaf(&Tensor::scalar(1.0));
        let _ = y;
        let z = {
            let mut g3 = Graph::new();
            let a = g3.leaf(&Tensor::scalar(1.0));
            let b = g3.leaf(&Tensor::scalar(1.0));
            g3.add(&a, &b).unwrap()
        };
        assert!(matches!(other.backward(&z), Err(Error::Untracked(_))));
    }

    #[test]
    fn finite_difference_agreement_per_operator() {
        // Random shapes, fixed seed, 20 trials across the operator set.
        // The numeric side runs through the naive f64 kernels; f32 tape
        // noise is absorbed by a small absolute floor.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let c = rng.gen_range(1..3usize);
            let h = rng.gen_range(4..7usize);
            let w = rng.gen_range(4..7usize);
            let o = rng.gen_range(1..3usize);
            let k = rng.gen_range(1..3usize);
            let stride = rng.gen_range(1..3usize);
            let x = rand_tensor(&mut rng, vec![c, h, w]);
            let wt = rand_tensor(&mut rng, vec![o, c, k, k]);
            let b = rand_tensor(&mut rng, vec![o]);
            // Central differences are invalid across the ReLU kink; only use
            // ReLU when every pre-activation is safely away from zero.
            let pre = kernels::conv2d(&x, &wt, &b, stride).unwrap();
            let kink_safe = pre.data().iter().all(|v| v.abs() > 5e-3);
            let kind = if trial % 2 == 1 && kink_safe {
                Activation::Relu
            } else {
                Activation::Elu
            };
            let out_len = o * ((h - k) / stride + 1) * ((w - k) / stride + 1);
            let target = Tensor::filled(vec![out_len], 0.25);

            let wt64: Vec<f64> = wt.data().iter().map(|&v| v as f64).collect();
            let b64: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
            let t64 = vec![0.25f64; out_len];

            let f = (
                |g: &mut Graph, xv: &Var| {
                    let wv = g.leaf(&wt);
                    let bv = g.leaf(&b);
                    let y = g.conv2d(xv, &wv, &bv, stride)?;
                    let y = g.activation(&y, kind);
                    let flat = y.value().len();
                    let y = g.reshape(&y, vec![flat])?;
                    g.mse_loss(&y, &target)
                },
                |probe: &[f64]| {
                    let (y, _) = reference::conv2d(probe, (c, h, w), &wt64, (o, k, k), &b64, stride);
                    let y = reference::activation(&y, kind);
                    Ok(reference::mse(&y, &t64))
                },
            );

            // Reimplement the sweep here so each component can use a mixed
            // absolute/relative tolerance.
            let mut g = Graph::new();
            let leaf = g.leaf(&x);
            let out = f.tracked(&mut g, &leaf).unwrap();
            let analytic = g.backward(&out).unwrap().wrt_or_zero(&leaf);
            let mut probe: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
            for i in 0..x.len() {
                let (numeric, rel) =
                    grad_check_component(&f, &mut probe, analytic.data()[i], i, 1e-3).unwrap();
                let abs = (analytic.data()[i] as f64 - numeric).abs();
                assert!(
                    rel < 1e-3 || abs < 1e-5,
                    "trial {trial} comp {i}: rel {rel}, abs {abs}"
                );
            }
        }
    }

    #[test]
    fn grad_check_identity_and_elu() {
        let x = Tensor::new(vec![1], vec![0.5]).unwrap();
        let ident = (
            |g: &mut Graph, xv: &Var| g.mse_loss(xv, &Tensor::zeros(vec![1])),
            |probe: &[f64]| Ok(reference::mse(probe, &[0.0])),
        );
        let err = grad_check(&ident, &x, 1e-3).unwrap();
        assert!(err < 1e-4);

        let elu = (
            |g: &mut Graph, xv: &Var| {
                let y = g.activation(xv, Activation::Elu);
                g.mse_loss(&y, &Tensor::zeros(vec![1]))
            },
            |probe: &[f64]| {
                let y = reference::activation(probe, Activation::Elu);
                Ok(reference::mse(&y, &[0.0]))
            },
        );
        let err = grad_check(&elu, &x, 1e-3).unwrap();
        assert!(err < 1e-4, "elu at 0.5: {err}");
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grad(a*f + b*g) == a*grad(f) + b*grad(g) for scalar f, g.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, vec![6]);
        let w1 = rand_tensor(&mut rng, vec![1, 6]);
        let w2 = rand_tensor(&mut rng, vec![1, 6]);
        let b = Tensor::zeros(vec![1]);
        let (a_coef, b_coef) = (2.5f32, -0.75f32);

        let grad_of = |combine: &dyn Fn(&mut Graph, &Var, &Var) -> Var| -> Tensor {
            let mut g = Graph::new();
            let xv = g.leaf(&x);
            let w1v = g.leaf(&w1);
            let w2v = g.leaf(&w2);
            let bv = g.leaf(&b);
            let f = g.dense(&xv, &w1v, &bv).unwrap();
            let f = g.activation(&f, Activation::Elu);
            let h = g.dense(&xv, &w2v, &bv).unwrap();
            let h = g.activation(&h, Activation::Elu);
            let out = combine(&mut g, &f, &h);
            let grads = g.backward(&out).unwrap();
            grads.wrt_or_zero(&xv)
        };

        let combined = grad_of(&|g, f, h| {
            let af = g.scale(f, a_coef);
            let bh = g.scale(h, b_coef);
            g.add(&af, &bh).unwrap()
        });
        let gf = grad_of(&|g, f, _| g.scale(f, 1.0));
        let gh = grad_of(&|g, _, h| g.scale(h, 1.0));
        for i in 0..x.len() {
            let expect = a_coef * gf.data()[i] + b_coef * gh.data()[i];
            assert!(
                (combined.data()[i] - expect).abs() < 1e-5,
                "component {i}: {} vs {expect}",
                combined.data()[i]
            );
        }
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = rand_tensor(&mut rng, vec![2, 5, 5]);
        let w = rand_tensor(&mut rng, vec![3, 2, 2, 2]);
        let b = rand_tensor(&mut rng, vec![3]);
        let run = || {
            let mut g = Graph::new();
            let xv = g.leaf(&x);
            let wv = g.leaf(&w);
            let bv = g.leaf(&b);
            let y = g.conv2d(&xv, &wv, &bv, 1).unwrap();
            let y = g.activation(&y, Activation::Elu);
            let n = y.value().len();
            let y = g.reshape(&y, vec![n]).unwrap();
            let loss = g.mse_loss(&y, &Tensor::zeros(vec![n])).unwrap();
            let grads = g.backward(&loss).unwrap();
            (
                loss.value().item().unwrap(),
                grads.wrt_or_zero(&wv).data().to_vec(),
            )
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(
            g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
