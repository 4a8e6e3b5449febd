//! Graph autoencoder: TAGCN encoder, inner-product adjacency decoder and the
//! zero-inflated negative binomial parameter head.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::tensor::{RngState, Tape, Tensor, Var};

/// Bound on the pre-exponential mean so `exp` stays finite.
pub const MU_LOG_CLAMP: f64 = 15.0;
/// Added to the softplus dispersion.
pub const THETA_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// Weight and bias of one fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `weights[l][k]` maps layer `l` input through the `k`-th operator power.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub weights: Vec<Vec<Tensor>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZinbHeadParams {
    pub hidden: Vec<Dense>,
    pub pi: Dense,
    pub mu: Dense,
    pub theta: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub zinb: ZinbHeadParams,
}

/// Architecture needed to shape or rebuild parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub n_genes: usize,
    pub widths: Vec<usize>,
    pub k_order: usize,
}

impl Architecture {
    /// Widths of the ZINB head's hidden layers: encoder widths reversed,
    /// without the embedding width.
    pub fn head_widths(&self) -> Vec<usize> {
        self.widths.iter().rev().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_genes == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("widths", format!("{:?} with {} genes", self.widths, self.n_genes)));
        }
        Ok(())
    }
}

fn glorot(rng: &mut RngState, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.sample_uniform(&[fan_in, fan_out]).map(|u| a * (2.0 * u - 1.0))
}

fn dense_init(rng: &mut RngState, fan_in: usize, fan_out: usize) -> Dense {
    Dense { weight: glorot(rng, fan_in, fan_out), bias: Tensor::zeros(&[1, fan_out]) }
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: &Architecture, rng: &mut RngState) -> Result<Self> {
        arch.validate()?;
        let mut dims = vec![arch.n_genes];
        dims.extend(&arch.widths);
        let weights = dims
            .windows(2)
            .map(|w| (0..=arch.k_order).map(|_| glorot(rng, w[0], w[1])).collect())
            .collect();
        let head = arch.head_widths();
        let hidden: Vec<Dense> = head.windows(2).map(|w| dense_init(rng, w[0], w[1])).collect();
        let last = *head.last().expect("non-empty widths");
        Ok(Self {
            encoder: EncoderParams { weights },
            zinb: ZinbHeadParams {
                hidden,
                pi: dense_init(rng, last, arch.n_genes),
                mu: dense_init(rng, last, arch.n_genes),
                theta: dense_init(rng, last, arch.n_genes),
            },
        })
    }

    /// Parameters by checkpoint key, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.weights.iter().enumerate() {
            for (k, w) in layer.iter().enumerate() {
                out.push((format!("layer{}.order{k}", l + 1), w));
            }
        }
        let z = &self.zinb;
        for (i, d) in z.hidden.iter().enumerate() {
            out.push((format!("zinb.{i}.weight"), &d.weight));
            out.push((format!("zinb.{i}.bias"), &d.bias));
        }
        for (name, d) in [("pi", &z.pi), ("mu", &z.mu), ("theta", &z.theta)] {
            out.push((format!("zinb.{name}.weight"), &d.weight));
            out.push((format!("zinb.{name}.bias"), &d.bias));
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::named`], same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.encoder.weights.iter_mut().flatten().collect();
        let z = &mut self.zinb;
        for d in z.hidden.iter_mut().chain([&mut z.pi, &mut z.mu, &mut z.theta]) {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.named().into_iter().map(|(k, v)| (k, v.clone())).collect()
    }

    /// Rebuilds from a key map, checking every key and shape against `arch`.
    pub fn from_map(arch: &Architecture, map: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut params = Self::init(arch, &mut RngState::new(0))?;
        let names: Vec<String> = params.named().into_iter().map(|(k, _)| k).collect();
        if map.len() != names.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", names.len(), map.len())));
        }
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let t = map.get(name).ok_or_else(|| Error::Checkpoint(format!("missing `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(params)
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }

    /// Records every parameter as a trainable tape leaf.
    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        let encoder =
            self.encoder.weights.iter().map(|l| l.iter().map(|w| tape.parameter(w.clone())).collect()).collect();
        let mut dense = |d: &Dense| DenseVars { weight: tape.parameter(d.weight.clone()), bias: tape.parameter(d.bias.clone()) };
        let hidden = self.zinb.hidden.iter().map(&mut dense).collect();
        let pi = dense(&self.zinb.pi);
        let mu = dense(&self.zinb.mu);
        let theta = dense(&self.zinb.theta);
        ModelVars { encoder, hidden, pi, mu, theta }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

/// Tape handles for every parameter of a [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: Vec<Vec<Var>>,
    pub hidden: Vec<DenseVars>,
    pub pi: DenseVars,
    pub mu: DenseVars,
    pub theta: DenseVars,
}

impl ModelVars {
    /// Same order as [`ModelParams::named`].
    pub fn all(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.encoder.iter().flatten().copied().collect();
        for d in self.hidden.iter().chain([&self.pi, &self.mu, &self.theta]) {
            out.push(d.weight);
            out.push(d.bias);
        }
        out
    }
}

/// `σ(Σ_k Âᵏ h W_k)`. Propagates features first when the layer widens and
/// transforms first (Horner form) when it narrows.
pub fn tagcn_layer(
    tape: &mut Tape,
    h: Var,
    op: &NormalizedAdjacency,
    weights: &[Var],
    activation: Activation,
) -> Result<Var> {
    if weights.is_empty() {
        return Err(Error::invalid("weights", "need at least the order-0 weight"));
    }
    if weights.len() > op.k_order() + 1 {
        return Err(Error::invalid(
            "weights",
            format!("{} orders for an operator of order {}", weights.len() - 1, op.k_order()),
        ));
    }
    let a = Rc::clone(op.operator());
    let (d_in, d_out) = tape.value(weights[0]).dims2();
    let out = if d_in <= d_out {
        let mut p = h;
        let mut acc = tape.matmul(h, weights[0])?;
        for &w in &weights[1..] {
            p = tape.spmm(Rc::clone(&a), p)?;
            let term = tape.matmul(p, w)?;
            acc = tape.add(acc, term)?;
        }
        acc
    } else {
        let last = weights.len() - 1;
        let mut acc = tape.matmul(h, weights[last])?;
        for &w in weights[..last].iter().rev() {
            let propagated = tape.spmm(Rc::clone(&a), acc)?;
            let term = tape.matmul(h, w)?;
            acc = tape.add(propagated, term)?;
        }
        acc
    };
    Ok(match activation {
        Activation::Relu => tape.relu(out),
        Activation::Linear => out,
    })
}

/// Stacked TAGCN layers: ReLU on all but the last, which is linear.
pub fn encode(tape: &mut Tape, x: Var, op: &NormalizedAdjacency, layers: &[Vec<Var>]) -> Result<Var> {
    let mut h = x;
    for (l, w) in layers.iter().enumerate() {
        let act = if l + 1 == layers.len() { Activation::Linear } else { Activation::Relu };
        h = tagcn_layer(tape, h, op, w, act)?;
    }
    Ok(h)
}

/// `sigmoid(Z Zᵀ)`.
pub fn decode_adjacency(tape: &mut Tape, z: Var) -> Result<Var> {
    let gram = tape.matmul_t(z, z)?;
    Ok(tape.sigmoid(gram))
}

fn affine(tape: &mut Tape, h: Var, d: DenseVars) -> Result<Var> {
    let p = tape.matmul(h, d.weight)?;
    tape.add(p, d.bias)
}

/// Outputs of the ZINB head, each `N x M`.
#[derive(Clone, Copy, Debug)]
pub struct ZinbParams {
    pub pi: Var,
    pub mu: Var,
    pub theta: Var,
}

/// Dropout probability, mean and dispersion per cell and gene. The mean is
/// scaled by each cell's size factor.
pub fn zinb_head(tape: &mut Tape, z: Var, size_factors: &[f64], vars: &ModelVars) -> Result<ZinbParams> {
    let n = tape.value(z).rows();
    if size_factors.len() != n {
        return Err(Error::shape("zinb_head", format!("{} size factors for {n} cells", size_factors.len())));
    }
    let mut h = z;
    for &d in &vars.hidden {
        let a = affine(tape, h, d)?;
        h = tape.relu(a);
    }
    let pi_logit = affine(tape, h, vars.pi)?;
    let pi = tape.sigmoid(pi_logit);

    let mu_pre = affine(tape, h, vars.mu)?;
    let mu_pre = tape.clamp(mu_pre, -MU_LOG_CLAMP, MU_LOG_CLAMP);
    let mu_unit = tape.exp(mu_pre);
    let sf = tape.constant(Tensor::from_rows(n, 1, size_factors.to_vec())?);
    let mu = tape.mul(mu_unit, sf)?;

    let theta_pre = affine(tape, h, vars.theta)?;
    let theta = tape.softplus(theta_pre);
    let theta = tape.add_scalar(theta, THETA_FLOOR);
    Ok(ZinbParams { pi, mu, theta })
}
