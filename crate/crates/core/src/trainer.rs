//! Two-phase optimization. Pre-training fits the graph autoencoder with a
//! freshly sampled neighbor graph each epoch; the clustering phase adds the
//! self-training KL term against cluster centers initialized by k-means.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{
    degree_stats, gumbel_topk_adjacency, knn_graph, mask_diagonal, median_sigma, normalize_adjacency,
    rbf_similarity, BinaryAdjacency,
};
use crate::ingest::PreprocessedData;
use crate::model::{decode_adjacency, encode, zinb_head, Architecture, ModelParams, ModelVars};
use crate::objectives::{
    contrastive_loss, graph_recon_loss, kl_cluster_loss, soft_assign, target_distribution, total_loss_on_tape,
    zinb_nll, LossRecord, LossTerms, Phase,
};
use crate::tensor::{RngPosition, RngState, Tape, Tensor, Var};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const KMEANS_MAX_ITER: usize = 300;

const STREAM_SAMPLER: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_KMEANS: u64 = 2;

/// First and second moment estimates for each parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { v: m.clone(), m, step: 0 }
    }
}

/// Bias-corrected Adam update. Every gradient is checked before any
/// parameter changes; a non-finite entry aborts with the parameter's name.
pub fn adam_step(
    params: &mut [&mut Tensor],
    names: &[String],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let n = params.len();
    if names.len() != n || grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::shape(
            "adam_step",
            format!("{n} params, {} names, {} grads, {} moments", names.len(), grads.len(), state.m.len()),
        ));
    }
    for i in 0..n {
        if grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("`{}`: param {:?}, grad {:?}", names[i], params[i].shape(), grads[i].shape()),
            ));
        }
        if !grads[i].all_finite() {
            return Err(Error::NonFiniteGradient(names[i].clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..n {
        let p = params[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grads[i].data()) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centers: Tensor,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist(point, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(z: &Tensor, c: usize, rng: &mut RngState) -> Tensor {
    let (n, d) = z.dims2();
    let mut centers = Tensor::zeros(&[c, d]);
    let first = rng.below(n);
    centers.row_mut(0).copy_from_slice(z.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(first))).collect();
    for k in 1..c {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform_open() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if acc >= target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        centers.row_mut(k).copy_from_slice(z.row(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(z.row(i), z.row(pick)));
        }
    }
    centers
}

fn lloyd(z: &Tensor, mut centers: Tensor) -> KMeansResult {
    let (n, d) = z.dims2();
    let c = centers.rows();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (l, dist) = nearest(z.row(i), &centers);
            dists[i] = dist;
            if labels[i] != l {
                labels[i] = l;
                changed = true;
            }
        }
        let mut counts = vec![0usize; c];
        for &l in &labels {
            counts[l] += 1;
        }
        for k in 0..c {
            if counts[k] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    labels[i] = k;
                    counts[k] = 1;
                    dists[i] = 0.0;
                    changed = true;
                }
            }
        }
        let mut sums = Tensor::zeros(&[c, d]);
        for i in 0..n {
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
        for k in 0..c {
            if counts[k] > 0 {
                let inv = 1.0 / counts[k] as f64;
                for (dst, s) in centers.row_mut(k).iter_mut().zip(sums.row(k)) {
                    *dst = s * inv;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let wcss = (0..n).map(|i| sq_dist(z.row(i), centers.row(labels[i]))).sum();
    KMeansResult { centers, labels, wcss }
}

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` by WCSS.
/// Clusters that empty out are reseeded with the point farthest from its
/// center.
pub fn kmeans(z: &Tensor, c: usize, restarts: usize, rng: &mut RngState) -> Result<KMeansResult> {
    let (n, _) = z.dims2();
    if c == 0 || c > n {
        return Err(Error::invalid("clusters", format!("need 1..={n}, got {c}")));
    }
    if restarts == 0 {
        return Err(Error::invalid("restarts", "must be positive"));
    }
    if !z.all_finite() {
        return Err(Error::NumericDomain { op: "kmeans", detail: "non-finite embedding".into() });
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let run = lloyd(z, kmeans_pp(z, c, rng));
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Fraction of positions where two labelings differ.
pub fn label_change_fraction(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeSummary {
    pub mean: f64,
    pub std: f64,
    pub min: usize,
    pub max: usize,
}

impl DegreeSummary {
    pub fn of(graph: &BinaryAdjacency) -> Self {
        let h = degree_stats(graph);
        Self { mean: h.mean, std: h.std, min: h.min, max: h.max }
    }
}

/// One line of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub loss: LossRecord,
    /// Degrees of the graph carried into the next epoch.
    pub degree: DegreeSummary,
    /// Share of cells whose argmax assignment moved; clustering phase only.
    pub label_change: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainingTrace {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Loss components of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub graph: f64,
    pub zinb: f64,
    pub contrastive: f64,
    pub kl: f64,
    pub total: f64,
}

struct Forward {
    tape: Tape,
    vars: ModelVars,
    centers: Option<Var>,
    loss: Var,
    values: LossValues,
    graph: BinaryAdjacency,
    q: Option<Tensor>,
    target: Option<Tensor>,
}

/// Embedding and, after clustering starts, soft assignments and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub embedding: Tensor,
    pub q: Option<Tensor>,
    pub labels: Option<Vec<usize>>,
}

fn argmax_rows(q: &Tensor) -> Vec<usize> {
    (0..q.rows())
        .map(|i| {
            let row = q.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TrainerMeta {
    phase: Phase,
    pretrain_done: usize,
    cluster_done: usize,
    adam_step: u64,
    rng: RngPosition,
    graph: BinaryAdjacency,
    labels: Option<Vec<usize>>,
    trace: TrainingTrace,
}

/// Complete training state; cloning it forks a run.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    arch: Architecture,
    x: Tensor,
    counts: Tensor,
    size_factors: Vec<f64>,
    knn: BinaryAdjacency,
    knn_dense: Tensor,
    graph: BinaryAdjacency,
    params: ModelParams,
    adam: AdamState,
    rng: RngState,
    phase: Phase,
    pretrain_done: usize,
    cluster_done: usize,
    centers: Option<Tensor>,
    target: Option<Tensor>,
    labels: Option<Vec<usize>>,
    trace: TrainingTrace,
}

impl Trainer {
    /// Builds the KNN graph and initializes parameters from `cfg.seed`.
    pub fn new(data: &PreprocessedData, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let arch = cfg.architecture(data.n_genes());
        arch.validate()?;
        let params = ModelParams::init(&arch, &mut RngState::with_stream(cfg.seed, STREAM_INIT))?;
        let knn = knn_graph(&data.x_log, cfg.k)?;
        let adam = AdamState::new(params.named().into_iter().map(|(_, t)| t));
        Ok(Self {
            arch,
            x: data.x_log.clone(),
            counts: data.x_raw.clone(),
            size_factors: data.size_factors.clone(),
            knn_dense: knn.to_dense(),
            graph: knn.clone(),
            knn,
            params,
            adam,
            rng: RngState::with_stream(cfg.seed, STREAM_SAMPLER),
            phase: Phase::Pretrain,
            pretrain_done: 0,
            cluster_done: 0,
            centers: None,
            target: None,
            labels: None,
            trace: TrainingTrace::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn knn_graph(&self) -> &BinaryAdjacency {
        &self.knn
    }

    /// The graph the next epoch starts from.
    pub fn graph(&self) -> &BinaryAdjacency {
        &self.graph
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pretrain_epochs_done(&self) -> usize {
        self.pretrain_done
    }

    pub fn cluster_epochs_done(&self) -> usize {
        self.cluster_done
    }

    pub fn centers(&self) -> Option<&Tensor> {
        self.centers.as_ref()
    }

    pub fn trace(&self) -> &TrainingTrace {
        &self.trace
    }

    /// True once both phases have run their configured epochs.
    pub fn finished(&self) -> bool {
        self.phase == Phase::Cluster && self.cluster_done >= self.cfg.formal_epochs
    }

    fn forward(&self, params: &ModelParams, phase: Phase, rng: &mut RngState) -> Result<Forward> {
        let w = self.cfg.effective_weights();
        let k_order = self.cfg.k_order;
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let centers = match phase {
            Phase::Pretrain => None,
            Phase::Cluster => {
                let c = self.centers.clone().ok_or_else(|| Error::invalid("centers", "clustering not started"))?;
                Some(tape.parameter(c))
            }
        };
        let x = tape.constant(self.x.clone());
        let prev_op = normalize_adjacency(&self.graph, k_order);
        let z_prev = encode(&mut tape, x, &prev_op, &vars.encoder)?;
        let (z_new, target_graph, graph) = if self.cfg.disable_adaptive_graph {
            let t = tape.constant(self.knn_dense.clone());
            (z_prev, t, self.knn.clone())
        } else {
            let sigma = self.cfg.sigma.unwrap_or_else(|| median_sigma(tape.value(z_prev)));
            let s = rbf_similarity(&mut tape, z_prev, sigma)?;
            let s = mask_diagonal(&mut tape, s)?;
            let adj = gumbel_topk_adjacency(&mut tape, s, self.cfg.k, self.cfg.tau, rng)?;
            let op = normalize_adjacency(&adj.hard, k_order);
            let z_new = encode(&mut tape, x, &op, &vars.encoder)?;
            (z_new, adj.straight_through, adj.hard)
        };
        let a_tilde = decode_adjacency(&mut tape, z_new)?;
        let lg = graph_recon_loss(&mut tape, target_graph, a_tilde)?;
        let zp = zinb_head(&mut tape, z_new, &self.size_factors, &vars)?;
        let lz = zinb_nll(&mut tape, &self.counts, zp.pi, zp.mu, zp.theta)?;
        let lc = if w.lambda3 != 0.0 { Some(contrastive_loss(&mut tape, z_prev, z_new, self.cfg.tau_c)?) } else { None };
        let (lkl, q, target) = match centers {
            Some(c) => {
                let q = soft_assign(&mut tape, z_new, c)?;
                let refresh = self.cluster_done.is_multiple_of(self.cfg.p_refresh_interval);
                let p = match (&self.target, refresh) {
                    (Some(p), false) => p.clone(),
                    _ => target_distribution(tape.value(q)),
                };
                let kl = kl_cluster_loss(&mut tape, &p, q)?;
                (Some(kl), Some(tape.value(q).clone()), Some(p))
            }
            None => (None, None, None),
        };
        let terms = LossTerms { graph: Some(lg), zinb: Some(lz), contrastive: lc, kl: lkl };
        let loss = total_loss_on_tape(&mut tape, phase, &terms, &w)?;
        let item = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
        let values = LossValues {
            graph: item(Some(lg)),
            zinb: item(Some(lz)),
            contrastive: item(lc),
            kl: item(lkl),
            total: item(Some(loss)),
        };
        Ok(Forward { tape, vars, centers, loss, values, graph, q, target })
    }

    /// Loss of the next epoch's forward pass for `params`, using the current
    /// graph and a copy of the current sampler state.
    pub fn evaluate_with(&self, params: &ModelParams, phase: Phase) -> Result<LossValues> {
        Ok(self.forward(params, phase, &mut self.rng.clone())?.values)
    }

    pub fn evaluate(&self, phase: Phase) -> Result<LossValues> {
        self.evaluate_with(&self.params, phase)
    }

    fn param_names(&self, with_centers: bool) -> Vec<String> {
        let mut names: Vec<String> = self.params.named().into_iter().map(|(n, _)| n).collect();
        if with_centers {
            names.push("centers".into());
        }
        names
    }

    fn backward(&self, fwd: &Forward) -> Result<Vec<Tensor>> {
        let mut grads = fwd.tape.backward(fwd.loss)?;
        let mut out: Vec<Tensor> = fwd.vars.all().into_iter().map(|v| grads.take(v)).collect();
        if let Some(c) = fwd.centers {
            out.push(grads.take(c));
        }
        Ok(out)
    }

    /// Loss and named gradients of the next epoch without updating anything.
    pub fn gradients(&self) -> Result<(LossValues, Vec<(String, Tensor)>)> {
        let fwd = self.forward(&self.params, self.phase, &mut self.rng.clone())?;
        let grads = self.backward(&fwd)?;
        Ok((fwd.values, self.param_names(fwd.centers.is_some()).into_iter().zip(grads).collect()))
    }

    fn step(&mut self) -> Result<&EpochRecord> {
        let phase = self.phase;
        let mut rng = self.rng.clone();
        let fwd = self.forward(&self.params, phase, &mut rng)?;
        let epoch = match phase {
            Phase::Pretrain => self.pretrain_done,
            Phase::Cluster => self.cluster_done,
        };
        if !fwd.values.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                phase: match phase {
                    Phase::Pretrain => "pretrain",
                    Phase::Cluster => "cluster",
                },
            });
        }
        let grads = self.backward(&fwd)?;
        let names = self.param_names(fwd.centers.is_some());
        let lr = match phase {
            Phase::Pretrain => self.cfg.lr_pre,
            Phase::Cluster => self.cfg.lr_formal,
        };
        let mut params = self.params.clone();
        let mut centers = self.centers.clone();
        let mut adam = self.adam.clone();
        {
            let mut slots = params.tensors_mut();
            if fwd.centers.is_some() {
                slots.push(centers.as_mut().expect("centers in clustering phase"));
            }
            adam_step(&mut slots, &names, &grads, &mut adam, lr)?;
        }
        if !params.all_finite() || centers.as_ref().is_some_and(|c| !c.all_finite()) {
            return Err(Error::NonFiniteLoss { epoch, phase: "update" });
        }
        let label_change = match (&fwd.q, &self.labels) {
            (Some(q), Some(prev)) => {
                let labels = argmax_rows(q);
                let f = label_change_fraction(prev, &labels);
                self.labels = Some(labels);
                Some(f)
            }
            _ => None,
        };
        self.params = params;
        self.centers = centers;
        self.adam = adam;
        self.rng = rng;
        if fwd.target.is_some() {
            self.target = fwd.target;
        }
        self.graph = fwd.graph;
        match phase {
            Phase::Pretrain => self.pretrain_done += 1,
            Phase::Cluster => self.cluster_done += 1,
        }
        let v = fwd.values;
        self.trace.records.push(EpochRecord {
            loss: LossRecord { epoch, phase, l_g: v.graph, l_zinb: v.zinb, l_cg: v.contrastive, l_kl: v.kl, total: v.total },
            degree: DegreeSummary::of(&self.graph),
            label_change,
        });
        Ok(self.trace.records.last().expect("just pushed"))
    }

    /// One pre-training epoch.
    pub fn pretrain_epoch(&mut self) -> Result<&EpochRecord> {
        if self.phase != Phase::Pretrain {
            return Err(Error::invalid("phase", "pre-training already finished"));
        }
        self.step()
    }

    /// Embeds cells over the current graph and, once centers exist, assigns
    /// them.
    pub fn predict(&self) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let x = tape.constant(self.x.clone());
        let op = normalize_adjacency(&self.graph, self.cfg.k_order);
        let z = encode(&mut tape, x, &op, &vars.encoder)?;
        let (q, labels) = match &self.centers {
            Some(c) => {
                let c = tape.constant(c.clone());
                let q = soft_assign(&mut tape, z, c)?;
                let q = tape.value(q).clone();
                let labels = argmax_rows(&q);
                (Some(q), Some(labels))
            }
            None => (None, None),
        };
        Ok(Prediction { embedding: tape.value(z).clone(), q, labels })
    }

    /// Ends pre-training: k-means on the current embedding sets the centers
    /// and a fresh optimizer covers weights and centers.
    pub fn start_clustering(&mut self) -> Result<KMeansResult> {
        if self.phase != Phase::Pretrain {
            return Err(Error::invalid("phase", "clustering already started"));
        }
        let c = self.cfg.require_clusters()?;
        let z = self.predict()?.embedding;
        let mut rng = RngState::with_stream(self.cfg.seed, STREAM_KMEANS);
        let km = kmeans(&z, c, self.cfg.kmeans_restarts, &mut rng)?;
        self.centers = Some(km.centers.clone());
        self.labels = Some(km.labels.clone());
        let mut shapes: Vec<&Tensor> = self.params.named().into_iter().map(|(_, t)| t).collect();
        shapes.push(self.centers.as_ref().expect("just set"));
        self.adam = AdamState::new(shapes);
        self.phase = Phase::Cluster;
        Ok(km)
    }

    /// One clustering epoch.
    pub fn cluster_epoch(&mut self) -> Result<&EpochRecord> {
        if self.phase != Phase::Cluster {
            return Err(Error::invalid("phase", "call start_clustering first"));
        }
        self.step()
    }

    /// Runs whatever remains of both phases; `on_epoch` sees every record.
    pub fn run(&mut self, on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>) -> Result<()> {
        self.run_for(usize::MAX, on_epoch)
    }

    /// Like [`Trainer::run`] but returns after at most `max_epochs` epochs.
    pub fn run_for(
        &mut self,
        max_epochs: usize,
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        let mut left = max_epochs;
        while left > 0 && self.phase == Phase::Pretrain && self.pretrain_done < self.cfg.pretrain_epochs {
            let rec = self.pretrain_epoch()?.clone();
            on_epoch(self, &rec)?;
            left -= 1;
        }
        if left == 0 {
            return Ok(());
        }
        if self.phase == Phase::Pretrain {
            self.start_clustering()?;
        }
        while left > 0 && self.cluster_done < self.cfg.formal_epochs {
            let rec = self.cluster_epoch()?.clone();
            on_epoch(self, &rec)?;
            left -= 1;
        }
        Ok(())
    }

    /// Serializes the full state, tagged with the config hash.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors: BTreeMap<String, Tensor> = self.params.to_map();
        let names = self.param_names(self.centers.is_some() && self.phase == Phase::Cluster);
        for (i, name) in names.iter().enumerate() {
            tensors.insert(format!("adam.m.{name}"), self.adam.m[i].clone());
            tensors.insert(format!("adam.v.{name}"), self.adam.v[i].clone());
        }
        if let Some(c) = &self.centers {
            tensors.insert("centers".into(), c.clone());
        }
        if let Some(p) = &self.target {
            tensors.insert("target".into(), p.clone());
        }
        let meta = TrainerMeta {
            phase: self.phase,
            pretrain_done: self.pretrain_done,
            cluster_done: self.cluster_done,
            adam_step: self.adam.step,
            rng: self.rng.position(),
            graph: self.graph.clone(),
            labels: self.labels.clone(),
            trace: self.trace.clone(),
        };
        Ok(Checkpoint { config_hash: self.cfg.hash(), meta: serde_json::to_value(meta)?, tensors })
    }

    /// Restores a state saved by [`Trainer::to_checkpoint`]; the config must
    /// hash to the stored value.
    pub fn from_checkpoint(data: &PreprocessedData, cfg: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.config_hash != cfg.hash() {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {}, config {}",
                ckpt.config_hash,
                cfg.hash()
            )));
        }
        let mut t = Self::new(data, cfg)?;
        let meta: TrainerMeta = serde_json::from_value(ckpt.meta.clone())?;
        let model: BTreeMap<String, Tensor> = ckpt
            .tensors
            .iter()
            .filter(|(k, _)| k.starts_with("layer") || k.starts_with("zinb."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        t.params = ModelParams::from_map(&t.arch, &model)?;
        t.centers = ckpt.tensors.get("centers").cloned();
        t.target = ckpt.tensors.get("target").cloned();
        let names = t.param_names(t.centers.is_some() && meta.phase == Phase::Cluster);
        let get = |key: String| {
            ckpt.tensors.get(&key).cloned().ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))
        };
        let m = names.iter().map(|n| get(format!("adam.m.{n}"))).collect::<Result<Vec<_>>>()?;
        let v = names.iter().map(|n| get(format!("adam.v.{n}"))).collect::<Result<Vec<_>>>()?;
        t.adam = AdamState { m, v, step: meta.adam_step };
        if meta.graph.n() != t.knn.n() {
            return Err(Error::Checkpoint(format!("graph has {} nodes, data {}", meta.graph.n(), t.knn.n())));
        }
        t.phase = meta.phase;
        t.pretrain_done = meta.pretrain_done;
        t.cluster_done = meta.cluster_done;
        t.rng = RngState::restore(meta.rng);
        t.graph = meta.graph;
        t.labels = meta.labels;
        t.trace = meta.trace;
        Ok(t)
    }
}
