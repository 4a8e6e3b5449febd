//! Cell graphs: KNN construction, the Gumbel top-K sampler, symmetric
//! normalization and degree statistics.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{RngState, SparseMatrix, Tape, Tensor, Var};

/// Value added to the diagonal of a similarity matrix so a node never picks
/// itself.
pub const DIAGONAL_MASK: f64 = -1e9;

/// Undirected 0/1 graph without self-loops, stored as sorted neighbor lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryAdjacency {
    n: usize,
    neighbors: Vec<Vec<usize>>,
}

impl BinaryAdjacency {
    pub fn empty(n: usize) -> Self {
        Self { n, neighbors: vec![Vec::new(); n] }
    }

    /// Undirected graph from an edge list; self-loops are dropped and
    /// duplicates merged.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::shape("BinaryAdjacency", format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i != j {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        for row in &mut neighbors {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self { n, neighbors })
    }

    /// Symmetrized closure of directed out-neighbor lists.
    pub fn from_directed(out: &[Vec<usize>]) -> Result<Self> {
        let edges: Vec<(usize, usize)> =
            out.iter().enumerate().flat_map(|(i, row)| row.iter().map(move |&j| (i, j))).collect();
        Self::from_edges(out.len(), &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.n, self.n]);
        for (i, row) in self.neighbors.iter().enumerate() {
            for &j in row {
                t.set(i, j, 1.0);
            }
        }
        t
    }

    /// Node permutation: node `perm[i]` of the result is node `i` here.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let edges: Vec<(usize, usize)> = self
            .neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&j| (perm[i], perm[j])))
            .collect();
        Self::from_edges(self.n, &edges).expect("permutation of a valid graph")
    }
}

/// `min(a + aᵀ, 1)` with the diagonal cleared.
pub fn symmetrize(a: &Tensor) -> Result<BinaryAdjacency> {
    let (r, c) = a.dims2();
    if r != c {
        return Err(Error::shape("symmetrize", format!("{r}x{c} is not square")));
    }
    let mut edges = Vec::new();
    for i in 0..r {
        for (j, &v) in a.row(i).iter().enumerate() {
            if v == 1.0 {
                edges.push((i, j));
            } else if v != 0.0 {
                return Err(Error::invalid("adjacency", format!("entry ({i}, {j}) = {v} is not 0/1")));
            }
        }
    }
    BinaryAdjacency::from_edges(r, &edges)
}

/// Squared Euclidean distances between all rows, from explicit differences.
pub fn pairwise_sq_distances(x: &Tensor) -> Tensor {
    let (n, _) = x.dims2();
    let mut d = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Indices of the `k` largest entries of `row`, skipping `exclude`; ties go
/// to the smaller index. Returned in ascending index order.
pub fn top_k_indices(row: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).filter(|&j| Some(j) != exclude).collect();
    let cmp = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
    if k < order.len() {
        order.select_nth_unstable_by(k, cmp);
        order.truncate(k);
    }
    order.sort_unstable();
    order
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::invalid("k", format!("need 0 < K < N, got K={k}, N={n}")));
    }
    Ok(())
}

/// Directed K-nearest-neighbor lists by Euclidean distance.
pub fn knn_directed(features: &Tensor, k: usize) -> Result<Vec<Vec<usize>>> {
    let (n, _) = features.dims2();
    check_k(k, n)?;
    if !features.all_finite() {
        return Err(Error::NumericDomain { op: "knn_graph", detail: "non-finite feature value".into() });
    }
    let d = pairwise_sq_distances(features);
    Ok((0..n)
        .map(|i| {
            let neg: Vec<f64> = d.row(i).iter().map(|v| -v).collect();
            top_k_indices(&neg, k, Some(i))
        })
        .collect())
}

/// KNN graph with reciprocal edges added.
pub fn knn_graph(features: &Tensor, k: usize) -> Result<BinaryAdjacency> {
    BinaryAdjacency::from_directed(&knn_directed(features, k)?)
}

/// Median heuristic: `2σ² = median` of the off-diagonal squared distances.
pub fn median_sigma(z: &Tensor) -> f64 {
    let (n, _) = z.dims2();
    let d = pairwise_sq_distances(z);
    let mut vals: Vec<f64> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
    if vals.is_empty() {
        return 1.0;
    }
    let mid = vals.len() / 2;
    vals.select_nth_unstable_by(mid, f64::total_cmp);
    let mut median = vals[mid];
    if vals.len().is_multiple_of(2) {
        let lower = vals[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        median = 0.5 * (median + lower);
    }
    (median.max(1e-12) / 2.0).sqrt()
}

/// `exp(-‖z_i - z_j‖² / 2σ²)` for all pairs, on the tape.
pub fn rbf_similarity(tape: &mut Tape, z: Var, sigma: f64) -> Result<Var> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
    }
    let sq = tape.square(z);
    let norms = tape.row_sum(sq);
    let norms_t = tape.transpose(norms);
    let gram = tape.matmul_t(z, z)?;
    let cross = tape.mul_scalar(gram, -2.0);
    let partial = tape.add(norms, norms_t)?;
    let d = tape.add(partial, cross)?;
    let d = tape.clamp(d, 0.0, f64::INFINITY);
    let scaled = tape.mul_scalar(d, -1.0 / (2.0 * sigma * sigma));
    Ok(tape.exp(scaled))
}

/// Adds [`DIAGONAL_MASK`] to the diagonal.
pub fn mask_diagonal(tape: &mut Tape, s: Var) -> Result<Var> {
    let (n, m) = tape.value(s).dims2();
    if n != m {
        return Err(Error::shape("mask_diagonal", format!("{n}x{m} is not square")));
    }
    let mut mask = Tensor::zeros(&[n, n]);
    for i in 0..n {
        mask.set(i, i, DIAGONAL_MASK);
    }
    let mask = tape.constant(mask);
    tape.add(s, mask)
}

/// Inverse-CDF Gumbel(0, 1) from a uniform draw.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

pub fn sample_gumbel(rng: &mut RngState, shape: &[usize]) -> Tensor {
    rng.sample_uniform(shape).map(gumbel_from_uniform)
}

/// Output of one Gumbel top-K draw.
#[derive(Clone, Debug)]
pub struct AdaptiveAdjacency {
    /// Symmetrized hard graph; the forward value of `straight_through`.
    pub hard: BinaryAdjacency,
    /// Directed top-K lists before symmetrization.
    pub directed: Vec<Vec<usize>>,
    /// Row-stochastic tempered softmax of the perturbed scores.
    pub soft: Var,
    /// Straight-through matrix before symmetrization.
    pub straight_through_directed: Var,
    /// `min(st + stᵀ, 1)` with a zero diagonal.
    pub straight_through: Var,
}

/// Perturbs `s` with Gumbel noise, keeps the top K per row as the hard graph
/// and routes gradients through the tempered softmax.
pub fn gumbel_topk_adjacency(
    tape: &mut Tape,
    s: Var,
    k: usize,
    tau: f64,
    rng: &mut RngState,
) -> Result<AdaptiveAdjacency> {
    let (n, m) = tape.value(s).dims2();
    if n != m {
        return Err(Error::shape("gumbel_topk_adjacency", format!("{n}x{m} is not square")));
    }
    let g = sample_gumbel(rng, &[n, n]);
    let g = tape.constant(g);
    let perturbed = tape.add(s, g)?;
    topk_from_scores(tape, perturbed, k, tau)
}

/// The deterministic part of [`gumbel_topk_adjacency`] on already
/// perturbed scores.
pub fn topk_from_scores(tape: &mut Tape, scores: Var, k: usize, tau: f64) -> Result<AdaptiveAdjacency> {
    let (n, _) = tape.value(scores).dims2();
    check_k(k, n)?;
    let soft = tape.row_softmax(scores, tau)?;
    let value = tape.value(scores);
    let directed: Vec<Vec<usize>> = (0..n).map(|i| top_k_indices(value.row(i), k, Some(i))).collect();
    let mut hard = Tensor::zeros(&[n, n]);
    for (i, row) in directed.iter().enumerate() {
        for &j in row {
            hard.set(i, j, 1.0);
        }
    }
    let st = tape.straight_through(hard, soft)?;
    let st_t = tape.transpose(st);
    let both = tape.add(st, st_t)?;
    let capped = tape.clamp(both, f64::NEG_INFINITY, 1.0);
    let mut off_diag = Tensor::ones(&[n, n]);
    for i in 0..n {
        off_diag.set(i, i, 0.0);
    }
    let off_diag = tape.constant(off_diag);
    let symmetric = tape.mul(capped, off_diag)?;
    Ok(AdaptiveAdjacency {
        hard: BinaryAdjacency::from_directed(&directed)?,
        directed,
        soft,
        straight_through_directed: st,
        straight_through: symmetric,
    })
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}`.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    operator: Rc<SparseMatrix>,
    k_order: usize,
}

impl NormalizedAdjacency {
    pub fn operator(&self) -> &Rc<SparseMatrix> {
        &self.operator
    }

    pub fn k_order(&self) -> usize {
        self.k_order
    }

    /// The `k`-th power, materialized.
    pub fn power(&self, k: usize) -> Result<SparseMatrix> {
        let mut p = SparseMatrix::identity(self.operator.rows());
        for _ in 0..k {
            p = p.matmul_sparse(&self.operator)?;
        }
        Ok(p)
    }
}

pub fn normalize_adjacency(a: &BinaryAdjacency, k_order: usize) -> NormalizedAdjacency {
    let n = a.n();
    let hat_degree: Vec<f64> = a.degrees().iter().map(|&d| (d + 1) as f64).collect();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    indptr.push(0);
    for i in 0..n {
        let nb = a.neighbors(i);
        let split = nb.partition_point(|&j| j < i);
        for &j in nb[..split].iter().chain(std::iter::once(&i)).chain(&nb[split..]) {
            indices.push(j);
            values.push(1.0 / (hat_degree[i] * hat_degree[j]).sqrt());
        }
        indptr.push(indices.len());
    }
    NormalizedAdjacency { operator: Rc::new(SparseMatrix::from_csr(n, n, indptr, indices, values)), k_order }
}

/// Width of the degree histogram bins.
pub const DEGREE_BIN_WIDTH: usize = 5;

/// Per-node degrees and summary statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeHistogram {
    pub degrees: Vec<usize>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: usize,
    pub max: usize,
    /// `[lo, hi, count]` with `lo <= degree < hi`.
    pub bins: Vec<[usize; 3]>,
}

impl DegreeHistogram {
    pub fn from_degrees(degrees: Vec<usize>) -> Self {
        let n = degrees.len().max(1) as f64;
        let mean = degrees.iter().sum::<usize>() as f64 / n;
        let var = degrees.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / n;
        let min = degrees.iter().copied().min().unwrap_or(0);
        let max = degrees.iter().copied().max().unwrap_or(0);
        let mut bins: Vec<[usize; 3]> = (0..=max / DEGREE_BIN_WIDTH)
            .map(|b| [b * DEGREE_BIN_WIDTH, (b + 1) * DEGREE_BIN_WIDTH, 0])
            .collect();
        for &d in &degrees {
            bins[d / DEGREE_BIN_WIDTH][2] += 1;
        }
        Self { degrees, mean, std: var.sqrt(), min, max, bins }
    }

    /// Sample skewness (population moments); zero for constant degrees.
    pub fn skewness(&self) -> f64 {
        if self.std == 0.0 || self.degrees.is_empty() {
            return 0.0;
        }
        let n = self.degrees.len() as f64;
        let m3 = self.degrees.iter().map(|&d| (d as f64 - self.mean).powi(3)).sum::<f64>() / n;
        m3 / self.std.powi(3)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn degree_stats(a: &BinaryAdjacency) -> DegreeHistogram {
    DegreeHistogram::from_degrees(a.degrees())
}
