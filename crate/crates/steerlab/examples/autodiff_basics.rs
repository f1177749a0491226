//! The reverse-mode tape: record a small computation, pull gradients
//! back through it, and cross-check against finite differences.
//!
//! Run with: cargo run --release --example autodiff_basics

use steerlab::autodiff::{grad_check, reference, Activation, Graph, Tensor, Var};

fn main() -> steerlab::Result<()> {
    // y = mean((elu(W.x + b) - t)^2), gradients w.r.t. every leaf.
    let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0])?;
    let w = Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6])?;
    let b = Tensor::new(vec![2], vec![0.05, -0.05])?;
    let target = Tensor::new(vec![2], vec![1.0, 0.0])?;

    let mut graph = Graph::new();
    let xv = graph.leaf(&x);
    let wv = graph.leaf(&w);
    let bv = graph.leaf(&b);
    let h = graph.dense(&xv, &wv, &bv)?;
    let h = graph.activation(&h, Activation::Elu);
    let loss = graph.mse_loss(&h, &target)?;
    println!("loss = {:.6}", loss.value().item()?);
    println!("nodes recorded: {}", graph.node_count());

    let grads = graph.backward(&loss)?;
    println!("dloss/dx = {:?}", grads.wrt(&xv).unwrap().data());
    println!("dloss/dW = {:?}", grads.wrt(&wv).unwrap().data());
    println!("dloss/db = {:?}", grads.wrt(&bv).unwrap().data());

    // The same function with an independent f64 evaluation route, probed
    // by central differences.
    let w64: Vec<f64> = w.data().iter().map(|&v| v as f64).collect();
    let b64: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let t64: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
    let f = (
        |g: &mut Graph, xv: &Var| {
            let wv = g.leaf(&w);
            let bv = g.leaf(&b);
            let h = g.dense(xv, &wv, &bv)?;
            let h = g.activation(&h, Activation::Elu);
            g.mse_loss(&h, &target)
        },
        |probe: &[f64]| {
            let h = reference::dense(probe, &w64, &b64, 2, 3);
            let h = reference::activation(&h, Activation::Elu);
            Ok(reference::mse(&h, &t64))
        },
    );
    let err = grad_check(&f, &x, 1e-3)?;
    println!("max relative error vs central differences: {err:.3e}");
    Ok(())
}
