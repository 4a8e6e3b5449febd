//! Loss terms: adjacency reconstruction, ZINB negative log-likelihood,
//! contrastive agreement between graph views, and Student-t clustering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::special::{digamma, lgamma};
use crate::tensor::{CustomOp, Tape, Tensor, Var, ARG_FLOOR};

/// Floor on `q` inside the clustering KL.
pub const Q_FLOOR: f64 = 1e-12;
/// Floor on row norms for cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.3, lambda2: 1.0, lambda3: 0.01, lambda4: 1.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub tau: f64,
    pub tau_c: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self { tau: 1.0, tau_c: 0.7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Cluster,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Cluster => "cluster",
        })
    }
}

/// Mean squared difference between a target adjacency and its
/// reconstruction.
pub fn graph_recon_loss(tape: &mut Tape, target: Var, a_tilde: Var) -> Result<Var> {
    if tape.shape(target) != tape.shape(a_tilde) {
        return Err(Error::shape(
            "graph_recon_loss",
            format!("{:?} vs {:?}", tape.shape(target), tape.shape(a_tilde)),
        ));
    }
    let d = tape.sub(a_tilde, target)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Log-pmf terms shared by the forward value and the gradient.
struct ZinbEntry {
    nll: f64,
    d_pi: f64,
    d_mu: f64,
    d_theta: f64,
}

fn zinb_entry(x: f64, pi: f64, mu: f64, theta: f64) -> ZinbEntry {
    let one_minus = 1.0 - pi;
    let ln_1mpi = one_minus.max(ARG_FLOOR).ln();
    let d_ln_1mpi = if one_minus >= ARG_FLOOR { -1.0 / one_minus } else { 0.0 };
    let mu = mu.max(ARG_FLOOR);
    let theta = theta.max(ARG_FLOOR);
    let t_plus_m = theta + mu;
    let ln_r = theta.ln() - t_plus_m.ln();
    if x == 0.0 {
        // ln π = -inf at π = 0 is harmless inside the log-sum-exp
        let ln_pi = pi.max(0.0).ln();
        let b = ln_1mpi + theta * ln_r;
        let hi = ln_pi.max(b);
        let lse = hi + ((ln_pi - hi).exp() + (b - hi).exp()).ln();
        let w = (b - lse).exp();
        let d_pi = -((-lse).exp() + w * d_ln_1mpi);
        ZinbEntry {
            nll: -lse,
            d_pi,
            d_mu: w * theta / t_plus_m,
            d_theta: -w * (ln_r + mu / t_plus_m),
        }
    } else {
        let ll = ln_1mpi + lgamma(x + theta) - lgamma(theta) - lgamma(x + 1.0)
            + theta * ln_r
            + x * (mu.ln() - t_plus_m.ln());
        ZinbEntry {
            nll: -ll,
            d_pi: -d_ln_1mpi,
            d_mu: (theta + x) / t_plus_m - x / mu,
            d_theta: -digamma(x + theta) + digamma(theta) - ln_r - 1.0 + (theta + x) / t_plus_m,
        }
    }
}

/// `-ln ZINB(x | π, μ, θ)` for one entry.
pub fn zinb_nll_scalar(x: f64, pi: f64, mu: f64, theta: f64) -> f64 {
    zinb_entry(x, pi, mu, theta).nll
}

/// `ZINB(x | π, μ, θ)`.
pub fn zinb_pmf(x: u64, pi: f64, mu: f64, theta: f64) -> f64 {
    (-zinb_nll_scalar(x as f64, pi, mu, theta)).exp()
}

struct ZinbNll {
    x: Tensor,
}

impl CustomOp for ZinbNll {
    fn name(&self) -> &'static str {
        "zinb_nll"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (pi, mu, theta) = (inputs[0], inputs[1], inputs[2]);
        let scale = g.item() / self.x.len() as f64;
        let mut gp = Vec::with_capacity(self.x.len());
        let mut gm = Vec::with_capacity(self.x.len());
        let mut gt = Vec::with_capacity(self.x.len());
        for i in 0..self.x.len() {
            let e = zinb_entry(self.x.data()[i], pi.data()[i], mu.data()[i], theta.data()[i]);
            gp.push(scale * e.d_pi);
            gm.push(scale * e.d_mu);
            gt.push(scale * e.d_theta);
        }
        let shape = self.x.shape().to_vec();
        vec![
            Some(Tensor::new(shape.clone(), gp).expect("shape")),
            Some(Tensor::new(shape.clone(), gm).expect("shape")),
            Some(Tensor::new(shape, gt).expect("shape")),
        ]
    }
}

/// Mean ZINB negative log-likelihood of the counts `x` over all entries.
pub fn zinb_nll(tape: &mut Tape, x: &Tensor, pi: Var, mu: Var, theta: Var) -> Result<Var> {
    for v in [pi, mu, theta] {
        if tape.shape(v) != x.shape() {
            return Err(Error::shape("zinb_nll", format!("{:?} vs counts {:?}", tape.shape(v), x.shape())));
        }
    }
    if x.is_empty() {
        return Err(Error::EmptyMatrix("zinb_nll".into()));
    }
    if let Some(bad) = x.data().iter().find(|v| !(v.is_finite() && **v >= 0.0 && v.fract() == 0.0)) {
        return Err(Error::NumericDomain { op: "zinb_nll", detail: format!("count {bad} is not a nonnegative integer") });
    }
    let (p, m, t) = (tape.value(pi), tape.value(mu), tape.value(theta));
    let total: f64 = (0..x.len())
        .map(|i| zinb_entry(x.data()[i], p.data()[i], m.data()[i], t.data()[i]).nll)
        .sum();
    let value = Tensor::scalar(total / x.len() as f64);
    Ok(tape.custom(vec![pi, mu, theta], value, Box::new(ZinbNll { x: x.clone() })))
}

/// InfoNCE with view-1 anchors against every view-2 row, cosine logits.
pub fn contrastive_loss(tape: &mut Tape, z1: Var, z2: Var, tau_c: f64) -> Result<Var> {
    if tape.shape(z1) != tape.shape(z2) {
        return Err(Error::shape("contrastive_loss", format!("{:?} vs {:?}", tape.shape(z1), tape.shape(z2))));
    }
    if !(tau_c > 0.0) {
        return Err(Error::invalid("tau_c", format!("must be > 0, got {tau_c}")));
    }
    if tape.value(z1).rows() < 2 {
        return Err(Error::invalid("z1", "need at least two rows"));
    }
    let n1 = tape.row_normalize(z1, NORM_FLOOR);
    let n2 = tape.row_normalize(z2, NORM_FLOOR);
    let cos = tape.matmul_t(n1, n2)?;
    let logits = tape.mul_scalar(cos, 1.0 / tau_c);
    let lse = tape.row_logsumexp(logits);
    let pos = tape.diag(logits)?;
    let per_anchor = tape.sub(lse, pos)?;
    Ok(tape.mean(per_anchor))
}

/// Student-t (one degree of freedom) similarity of each row to each center,
/// normalized per row.
pub fn soft_assign(tape: &mut Tape, z: Var, centers: Var) -> Result<Var> {
    let (_, d) = tape.value(z).dims2();
    let (c, dc) = tape.value(centers).dims2();
    if d != dc || c == 0 {
        return Err(Error::shape("soft_assign", format!("embedding width {d}, centers {c}x{dc}")));
    }
    let zsq = tape.square(z);
    let zn = tape.row_sum(zsq);
    let csq = tape.square(centers);
    let cn = tape.row_sum(csq);
    let cn = tape.transpose(cn);
    let cross = tape.matmul_t(z, centers)?;
    let cross = tape.mul_scalar(cross, -2.0);
    let dist = tape.add(zn, cn)?;
    let dist = tape.add(dist, cross)?;
    let dist = tape.clamp(dist, 0.0, f64::INFINITY);
    let kernel = tape.add_scalar(dist, 1.0);
    let kernel = tape.recip(kernel)?;
    let total = tape.row_sum(kernel);
    tape.div(kernel, total)
}

/// Sharpened self-training target; a plain value, never differentiated.
pub fn target_distribution(q: &Tensor) -> Tensor {
    let (n, c) = q.dims2();
    let mut freq = vec![0.0; c];
    for i in 0..n {
        for (f, v) in freq.iter_mut().zip(q.row(i)) {
            *f += v;
        }
    }
    let mut p = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let row: Vec<f64> = q.row(i).iter().zip(&freq).map(|(v, f)| if *f > 0.0 { v * v / f } else { 0.0 }).collect();
        let total: f64 = row.iter().sum();
        for (j, v) in row.into_iter().enumerate() {
            p.set(i, j, if total > 0.0 { v / total } else { 1.0 / c as f64 });
        }
    }
    p
}

/// `Σ_i Σ_c p ln(p / q)` with `q` floored inside the log.
pub fn kl_cluster_loss(tape: &mut Tape, p: &Tensor, q: Var) -> Result<Var> {
    if p.shape() != tape.shape(q) {
        return Err(Error::shape("kl_cluster_loss", format!("{:?} vs {:?}", p.shape(), tape.shape(q))));
    }
    let entropy_term: f64 = p.data().iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum();
    let pv = tape.constant(p.clone());
    let lq = tape.log_floor(q, Q_FLOOR)?;
    let cross = tape.mul(pv, lq)?;
    let cross = tape.sum(cross);
    let neg = tape.neg(cross);
    Ok(tape.add_scalar(neg, entropy_term))
}

/// `λ1 l_g + λ2 l_zinb + λ3 l_cg`, plus `λ4 l_kl` in the clustering phase.
pub fn total_loss(phase: Phase, lg: f64, lzinb: f64, lcg: f64, lkl: f64, w: &LossWeights) -> f64 {
    let base = w.lambda1 * lg + w.lambda2 * lzinb + w.lambda3 * lcg;
    match phase {
        Phase::Pretrain => base,
        Phase::Cluster => base + w.lambda4 * lkl,
    }
}

/// Loss terms recorded on a tape; absent terms are skipped.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub graph: Option<Var>,
    pub zinb: Option<Var>,
    pub contrastive: Option<Var>,
    pub kl: Option<Var>,
}

/// Differentiable counterpart of [`total_loss`].
pub fn total_loss_on_tape(tape: &mut Tape, phase: Phase, terms: &LossTerms, w: &LossWeights) -> Result<Var> {
    let mut weighted = vec![(terms.graph, w.lambda1), (terms.zinb, w.lambda2), (terms.contrastive, w.lambda3)];
    if phase == Phase::Cluster {
        weighted.push((terms.kl, w.lambda4));
    }
    let mut acc: Option<Var> = None;
    for (term, lambda) in weighted {
        let Some(v) = term else { continue };
        let scaled = tape.mul_scalar(v, lambda);
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    Ok(acc.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub l_g: f64,
    pub l_zinb: f64,
    pub l_cg: f64,
    pub l_kl: f64,
    pub total: f64,
}
