//! Steering regressors: PilotNet and a three-block mini residual
//! network, both mapping a 3x66x200 YUV frame to one steering angle in
//! degrees.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Activation, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::ModelInput;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Pilotnet,
    Miniresnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureId {
    pub kind: ArchKind,
    pub activation: Activation,
}

impl ArchitectureId {
    pub fn pilotnet(activation: Activation) -> Self {
        ArchitectureId {
            kind: ArchKind::Pilotnet,
            activation,
        }
    }

    pub fn miniresnet(activation: Activation) -> Self {
        ArchitectureId {
            kind: ArchKind::Miniresnet,
            activation,
        }
    }

    pub fn name(&self) -> String {
        let kind = match self.kind {
            ArchKind::Pilotnet => "pilotnet",
            ArchKind::Miniresnet => "miniresnet",
        };
        format!("{kind}:{}", self.activation.name())
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (kind, act) = s
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("bad architecture id '{s}'")))?;
        let kind = match kind {
            "pilotnet" => ArchKind::Pilotnet,
            "miniresnet" => ArchKind::Miniresnet,
            other => return Err(Error::Format(format!("unknown architecture '{other}'"))),
        };
        Ok(ArchitectureId {
            kind,
            activation: Activation::parse(act)?,
        })
    }
}

/// How a checkpoint came to be.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: String,
    pub seed: u64,
}

/// Named, ordered parameter tensors for one architecture.
#[derive(Clone, Debug)]
pub struct ParamSet {
    pub arch: ArchitectureId,
    params: Vec<(String, Tensor)>,
    pub provenance: Provenance,
}

impl ParamSet {
    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn validate_finite(&self) -> Result<()> {
        for (name, t) in &self.params {
            t.validate_finite(name)?;
        }
        Ok(())
    }

    /// Shape table `(name, shape)` in parameter order.
    pub fn shape_table(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }
}

/// `(name, shape, stride)` rows; stride is 0 for dense layers.
type LayerRow = (&'static str, Vec<usize>, usize);

fn pilotnet_rows() -> Vec<LayerRow> {
    vec![
        ("conv1.weight", vec![24, 3, 5, 5], 2),
        ("conv1.bias", vec![24], 2),
        ("conv2.weight", vec![36, 24, 5, 5], 2),
        ("conv2.bias", vec![36], 2),
        ("conv3.weight", vec![48, 36, 5, 5], 2),
        ("conv3.bias", vec![48], 2),
        ("conv4.weight", vec![64, 48, 3, 3], 1),
        ("conv4.bias", vec![64], 1),
        ("conv5.weight", vec![64, 64, 3, 3], 1),
        ("conv5.bias", vec![64], 1),
        ("fc1.weight", vec![100, 1152], 0),
        ("fc1.bias", vec![100], 0),
        ("fc2.weight", vec![50, 100], 0),
        ("fc2.bias", vec![50], 0),
        ("fc3.weight", vec![10, 50], 0),
        ("fc3.bias", vec![10], 0),
        ("fc4.weight", vec![1, 10], 0),
        ("fc4.bias", vec![1], 0),
    ]
}

fn miniresnet_rows() -> Vec<LayerRow> {
    vec![
        ("stem.weight", vec![16, 3, 5, 5], 2),
        ("stem.bias", vec![16], 2),
        ("b1.conv1.weight", vec![16, 16, 3, 3], 1),
        ("b1.conv1.bias", vec![16], 1),
        ("b1.conv2.weight", vec![16, 16, 3, 3], 1),
        ("b1.conv2.bias", vec![16], 1),
        ("b2.conv1.weight", vec![32, 16, 3, 3], 2),
        ("b2.conv1.bias", vec![32], 2),
        ("b2.conv2.weight", vec![32, 32, 3, 3], 1),
        ("b2.conv2.bias", vec![32], 1),
        ("b2.proj.weight", vec![32, 16, 1, 1], 2),
        ("b2.proj.bias", vec![32], 2),
        ("b3.conv1.weight", vec![64, 32, 3, 3], 2),
        ("b3.conv1.bias", vec![64], 2),
        ("b3.conv2.weight", vec![64, 64, 3, 3], 1),
        ("b3.conv2.bias", vec![64], 1),
        ("b3.proj.weight", vec![64, 32, 1, 1], 2),
        ("b3.proj.bias", vec![64], 2),
        ("fc1.weight", vec![32, 64], 0),
        ("fc1.bias", vec![32], 0),
        ("fc2.weight", vec![1, 32], 0),
        ("fc2.bias", vec![1], 0),
    ]
}

fn rows_for(kind: ArchKind) -> Vec<LayerRow> {
    match kind {
        ArchKind::Pilotnet => pilotnet_rows(),
        ArchKind::Miniresnet => miniresnet_rows(),
    }
}

fn fnv1a(name: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Kaiming-uniform fan-in init for weights, zeros for biases. Each
/// parameter draws from its own name-derived stream, so results do not
/// depend on initialization order.
fn init_params(rows: &[LayerRow], seed: u64) -> Vec<(String, Tensor)> {
    use rand::Rng;
    use rand::SeedableRng;

    rows.iter()
        .map(|(name, shape, _)| {
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(shape.clone())
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt() as f32;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                    seed.wrapping_add(fnv1a(name)),
                );
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::new(shape.clone(), data).unwrap()
            };
            (name.to_string(), tensor)
        })
        .collect()
}

pub fn build_pilotnet(seed: u64, activation: Activation) -> ParamSet {
    ParamSet {
        arch: ArchitectureId::pilotnet(activation),
        params: init_params(&pilotnet_rows(), seed),
        provenance: Provenance {
            strategy: "init".into(),
            seed,
        },
    }
}

pub fn build_miniresnet(seed: u64, activation: Activation) -> ParamSet {
    ParamSet {
        arch: ArchitectureId::miniresnet(activation),
        params: init_params(&miniresnet_rows(), seed),
        provenance: Provenance {
            strategy: "init".into(),
            seed,
        },
    }
}

/// Fresh parameter set with every tensor zeroed. Mostly for tests.
pub fn build_zeroed(arch: ArchitectureId) -> ParamSet {
    ParamSet {
        arch,
        params: rows_for(arch.kind)
            .iter()
            .map(|(name, shape, _)| (name.to_string(), Tensor::zeros(shape.clone())))
            .collect(),
        provenance: Provenance {
            strategy: "zeroed".into(),
            seed: 0,
        },
    }
}

/// Rebuilds a ParamSet from an architecture id and raw named tensors,
/// verifying the shape table.
pub fn assemble(
    arch: ArchitectureId,
    params: Vec<(String, Tensor)>,
    provenance: Provenance,
) -> Result<ParamSet> {
    let expected = rows_for(arch.kind);
    if params.len() != expected.len() {
        return Err(Error::Format(format!(
            "{} expects {} parameters, got {}",
            arch.name(),
            expected.len(),
            params.len()
        )));
    }
    for ((name, tensor), (exp_name, exp_shape, _)) in params.iter().zip(&expected) {
        if name != exp_name || tensor.shape() != &exp_shape[..] {
            return Err(Error::Format(format!(
                "parameter mismatch: got {name} {:?}, expected {exp_name} {exp_shape:?}",
                tensor.shape()
            )));
        }
    }
    let set = ParamSet {
        arch,
        params,
        provenance,
    };
    set.validate_finite()?;
    Ok(set)
}

fn p<'a>(params: &'a ParamSet, name: &str) -> &'a Tensor {
    params
        .get(name)
        .unwrap_or_else(|| panic!("parameter {name} missing"))
}

/// Inference forward pass; allocates no graph nodes.
pub fn forward(params: &ParamSet, input: &ModelInput) -> Result<f32> {
    let act = params.arch.activation;
    let x = input.tensor();
    match params.arch.kind {
        ArchKind::Pilotnet => {
            let mut h = x.clone();
            for (i, stride) in [2usize, 2, 2, 1, 1].iter().enumerate() {
                let name = format!("conv{}", i + 1);
                h = autodiff::conv2d(
                    &h,
                    p(params, &format!("{name}.weight")),
                    p(params, &format!("{name}.bias")),
                    *stride,
                )?;
                h = autodiff::activation(&h, act);
            }
            let mut v = h.reshaped(vec![h.len()])?;
            for i in 1..=4 {
                v = autodiff::dense(
                    &v,
                    p(params, &format!("fc{i}.weight")),
                    p(params, &format!("fc{i}.bias")),
                )?;
                if i < 4 {
                    v = autodiff::activation(&v, act);
                }
            }
            v.item()
        }
        ArchKind::Miniresnet => {
            let h = autodiff::conv2d(x, p(params, "stem.weight"), p(params, "stem.bias"), 2)?;
            let mut h = autodiff::activation(&h, act);
            for (block, stride) in [("b1", 1usize), ("b2", 2), ("b3", 2)] {
                h = res_block(params, &h, block, stride, act)?;
            }
            let pooled = autodiff::global_avg_pool(&h)?;
            let v = autodiff::dense(&pooled, p(params, "fc1.weight"), p(params, "fc1.bias"))?;
            let v = autodiff::activation(&v, act);
            let v = autodiff::dense(&v, p(params, "fc2.weight"), p(params, "fc2.bias"))?;
            v.item()
        }
    }
}

/// One residual block: conv-act-conv plus an identity or 1x1-projection
/// skip. With zero conv weights the block is exactly its skip path.
fn res_block(
    params: &ParamSet,
    x: &Tensor,
    name: &str,
    stride: usize,
    act: Activation,
) -> Result<Tensor> {
    let skip = match params.get(&format!("{name}.proj.weight")) {
        Some(w) => autodiff::conv2d(x, w, p(params, &format!("{name}.proj.bias")), stride)?,
        None => x.clone(),
    };
    let padded = autodiff::pad2d(x, 1)?;
    let y = autodiff::conv2d(
        &padded,
        p(params, &format!("{name}.conv1.weight")),
        p(params, &format!("{name}.conv1.bias")),
        stride,
    )?;
    let y = autodiff::activation(&y, act);
    let y = autodiff::pad2d(&y, 1)?;
    let y = autodiff::conv2d(
        &y,
        p(params, &format!("{name}.conv2.weight")),
        p(params, &format!("{name}.conv2.bias")),
        1,
    )?;
    autodiff::add(&y, &skip)
}

/// Graph-recorded forward pass. Returns the scalar output and the
/// parameter leaves in parameter order (for gradient lookup).
pub fn forward_tracked(
    params: &ParamSet,
    graph: &mut Graph,
    input: &Var,
) -> Result<(Var, Vec<Var>)> {
    let act = params.arch.activation;
    let mut leaves = Vec::with_capacity(params.params().len());
    for (_, t) in params.params() {
        leaves.push(graph.leaf(t));
    }
    let leaf = |name: &str| -> Var {
        let idx = params
            .params()
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("parameter {name} missing"));
        leaves[idx].clone()
    };

    let out = match params.arch.kind {
        ArchKind::Pilotnet => {
            let mut h = input.clone();
            for (i, stride) in [2usize, 2, 2, 1, 1].iter().enumerate() {
                let name = format!("conv{}", i + 1);
                let w = leaf(&format!("{name}.weight"));
                let b = leaf(&format!("{name}.bias"));
                h = graph.conv2d(&h, &w, &b, *stride)?;
                h = graph.activation(&h, act);
            }
            let n = h.value().len();
            let mut v = graph.reshape(&h, vec![n])?;
            for i in 1..=4 {
                let w = leaf(&format!("fc{i}.weight"));
                let b = leaf(&format!("fc{i}.bias"));
                v = graph.dense(&v, &w, &b)?;
                if i < 4 {
                    v = graph.activation(&v, act);
                }
            }
            v
        }
        ArchKind::Miniresnet => {
            let w = leaf("stem.weight");
            let b = leaf("stem.bias");
            let h = graph.conv2d(input, &w, &b, 2)?;
            let mut h = graph.activation(&h, act);
            for (block, stride) in [("b1", 1usize), ("b2", 2), ("b3", 2)] {
                let skip = if params.get(&format!("{block}.proj.weight")).is_some() {
                    let w = leaf(&format!("{block}.proj.weight"));
                    let b = leaf(&format!("{block}.proj.bias"));
                    graph.conv2d(&h, &w, &b, stride)?
                } else {
                    h.clone()
                };
                let padded = graph.pad2d(&h, 1)?;
                let w1 = leaf(&format!("{block}.conv1.weight"));
                let b1 = leaf(&format!("{block}.conv1.bias"));
                let y = graph.conv2d(&padded, &w1, &b1, stride)?;
                let y = graph.activation(&y, act);
                let y = graph.pad2d(&y, 1)?;
                let w2 = leaf(&format!("{block}.conv2.weight"));
                let b2 = leaf(&format!("{block}.conv2.bias"));
                let y = graph.conv2d(&y, &w2, &b2, 1)?;
                h = graph.add(&y, &skip)?;
            }
            let pooled = graph.global_avg_pool(&h)?;
            let w = leaf("fc1.weight");
            let b = leaf("fc1.bias");
            let v = graph.dense(&pooled, &w, &b)?;
            let v = graph.activation(&v, act);
            let w = leaf("fc2.weight");
            let b = leaf("fc2.bias");
            graph.dense(&v, &w, &b)?
        }
    };
    Ok((out, leaves))
}
