//! Synthetic datasets with known labels: a ZINB mixture of cell types and a
//! 2-D point cloud whose KNN graph has hub nodes.

use std::path::Path;

use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, CountMatrix, PreprocessedData};
use crate::tensor::{RngState, Tensor};

/// Parameters of the ZINB mixture generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_cells: usize,
    pub n_genes: usize,
    pub n_clusters: usize,
    /// NB dispersion of every entry.
    pub theta: f64,
    /// Probability of a structural zero.
    pub dropout: f64,
    /// Largest over smallest cluster size.
    pub imbalance: f64,
    /// Standard deviation of the log-normal base expression.
    pub base_log_sd: f64,
    /// Fraction of genes in each cluster's up-regulated block.
    pub block_fraction: f64,
    /// Multiplier applied to a cluster's block.
    pub fold_change: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_cells: 1000,
            n_genes: 300,
            n_clusters: 5,
            theta: 2.0,
            dropout: 0.1,
            imbalance: 1.0,
            base_log_sd: 0.5,
            block_fraction: 0.1,
            fold_change: 8.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config { key: "synth".into(), detail: e.message().to_string() })
    }

    /// Checks ranges; `dropout = 1` is accepted for boundary testing.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, detail: String| Err(Error::Config { key: key.into(), detail });
        if self.n_clusters == 0 || self.n_clusters > self.n_cells {
            return bad("n_clusters", format!("need 1..={}, got {}", self.n_cells, self.n_clusters));
        }
        if self.n_genes == 0 {
            return bad("n_genes", "must be positive".into());
        }
        if !(self.theta > 0.0) {
            return bad("theta", format!("must be > 0, got {}", self.theta));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return bad("dropout", format!("must be in [0, 1], got {}", self.dropout));
        }
        if !(self.imbalance >= 1.0) {
            return bad("imbalance", format!("must be >= 1, got {}", self.imbalance));
        }
        if !(self.block_fraction > 0.0 && self.block_fraction <= 1.0) {
            return bad("block_fraction", format!("must be in (0, 1], got {}", self.block_fraction));
        }
        if !(self.fold_change > 0.0) || !(self.base_log_sd >= 0.0) {
            return bad("fold_change", "fold change must be > 0 and base_log_sd >= 0".into());
        }
        Ok(())
    }

    /// Sizes in geometric progression from smallest to largest, summing to
    /// `n_cells`.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let c = self.n_clusters;
        let weights: Vec<f64> = (0..c)
            .map(|k| if c == 1 { 1.0 } else { self.imbalance.powf(k as f64 / (c - 1) as f64) })
            .collect();
        let total: f64 = weights.iter().sum();
        let exact: Vec<f64> = weights.iter().map(|w| w / total * self.n_cells as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let short = self.n_cells - sizes.iter().sum::<usize>();
        for &k in order.iter().take(short) {
            sizes[k] += 1;
        }
        sizes
    }
}

/// Per-cluster mean expression, `n_clusters x n_genes`.
pub fn cluster_means(spec: &SynthSpec, rng: &mut RngState) -> Result<Tensor> {
    let normal = Normal::new(0.0, spec.base_log_sd).map_err(|e| Error::invalid("base_log_sd", e.to_string()))?;
    let base: Vec<f64> = (0..spec.n_genes).map(|_| normal.sample(rng).exp()).collect();
    let block = ((spec.block_fraction * spec.n_genes as f64).round() as usize).max(1);
    let mut means = Tensor::zeros(&[spec.n_clusters, spec.n_genes]);
    for c in 0..spec.n_clusters {
        for (j, &b) in base.iter().enumerate() {
            means.set(c, j, b);
        }
        for k in 0..block {
            let j = (c * block + k) % spec.n_genes;
            means.set(c, j, base[j] * spec.fold_change);
        }
    }
    Ok(means)
}

/// One ZINB draw: a structural zero with probability `dropout`, otherwise
/// Gamma–Poisson with mean `mu` and dispersion `theta`.
pub fn sample_zinb(rng: &mut RngState, mu: f64, theta: f64, dropout: f64) -> Result<u32> {
    if rng.uniform_open() < dropout || mu <= 0.0 {
        return Ok(0);
    }
    let gamma = Gamma::new(theta, mu / theta).map_err(|e| Error::invalid("theta", e.to_string()))?;
    let rate = gamma.sample(rng);
    if rate <= 0.0 {
        return Ok(0);
    }
    let poisson = Poisson::new(rate).map_err(|e| Error::invalid("mu", e.to_string()))?;
    Ok(poisson.sample(rng).min(f64::from(u32::MAX)) as u32)
}

/// Counts and labels for a mixture of clusters; cell order is shuffled.
pub fn generate_zinb_mixture(spec: &SynthSpec, rng: &mut RngState) -> Result<(CountMatrix, Vec<usize>)> {
    spec.validate()?;
    let means = cluster_means(spec, rng)?;
    let mut labels: Vec<usize> =
        spec.cluster_sizes().iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
    for i in (1..labels.len()).rev() {
        labels.swap(i, rng.below(i + 1));
    }
    let mut rows = Vec::with_capacity(spec.n_cells);
    for &c in &labels {
        let row = (0..spec.n_genes)
            .map(|j| sample_zinb(rng, means.get(c, j), spec.theta, spec.dropout))
            .collect::<Result<Vec<u32>>>()?;
        rows.push(row);
    }
    let cells = (0..spec.n_cells).map(|i| format!("cell{i}")).collect();
    let genes = (0..spec.n_genes).map(|j| format!("gene{j}")).collect();
    Ok((CountMatrix::from_dense(&rows, cells, genes)?, labels))
}

/// Fraction of points in the dense blob.
pub const BLOB_FRACTION: f64 = 0.7;
const BLOB_SD: f64 = 0.1;
const BACKGROUND_HALF_WIDTH: f64 = 4.0;

/// Dense Gaussian blob plus a sparse uniform background, `n x 2`; the second
/// value marks background points.
pub fn generate_longtail_points(n: usize, rng: &mut RngState) -> Result<(Tensor, Vec<usize>)> {
    if n < 10 {
        return Err(Error::invalid("n", format!("need at least 10 points, got {n}")));
    }
    let n_blob = (BLOB_FRACTION * n as f64).round() as usize;
    let normal = Normal::new(0.0, BLOB_SD).expect("positive sd");
    let mut pts = Tensor::zeros(&[n, 2]);
    let mut labels = vec![0usize; n];
    for i in 0..n {
        for d in 0..2 {
            let v = if i < n_blob {
                normal.sample(rng)
            } else {
                BACKGROUND_HALF_WIDTH * (2.0 * rng.uniform_open() - 1.0)
            };
            pts.set(i, d, v);
        }
        labels[i] = usize::from(i >= n_blob);
    }
    Ok((pts, labels))
}

/// Training inputs built from long-tail points. Features are the points
/// lifted isometrically into `n_genes` dimensions (so Euclidean KNN graphs
/// match the 2-D ones); counts are Poisson with log-rate linear in the
/// features.
pub fn longtail_dataset(n: usize, n_genes: usize, rng: &mut RngState) -> Result<(PreprocessedData, Vec<usize>)> {
    if n_genes < 2 {
        return Err(Error::invalid("n_genes", "need at least 2"));
    }
    let (pts, labels) = generate_longtail_points(n, rng)?;
    // Two orthonormal rows by Gram–Schmidt.
    let normal = Normal::new(0.0, 1.0).expect("unit sd");
    let mut basis = [vec![0.0; n_genes], vec![0.0; n_genes]];
    for r in 0..2 {
        let mut v: Vec<f64> = (0..n_genes).map(|_| normal.sample(rng)).collect();
        for prev in &basis[..r] {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        basis[r] = v.into_iter().map(|a| a / norm).collect();
    }
    let mut x_log = Tensor::zeros(&[n, n_genes]);
    let mut x_raw = Tensor::zeros(&[n, n_genes]);
    let scale = (n_genes as f64).sqrt() / 2.0;
    for i in 0..n {
        for j in 0..n_genes {
            let f = pts.get(i, 0) * basis[0][j] + pts.get(i, 1) * basis[1][j];
            x_log.set(i, j, f);
            let rate = (1.0 + scale * f).clamp(-10.0, 6.0).exp();
            let count = Poisson::new(rate).map(|p| p.sample(rng)).unwrap_or(0.0);
            x_raw.set(i, j, count);
        }
    }
    let data = PreprocessedData {
        x_log,
        x_raw,
        size_factors: vec![1.0; n],
        hvg_indices: (0..n_genes).collect(),
        cell_ids: (0..n).map(|i| format!("cell{i}")).collect(),
        gene_ids: (0..n_genes).map(|j| format!("feature{j}")).collect(),
    };
    Ok((data, labels))
}

/// Writes `counts.csv` and `labels.csv` into `dir`.
pub fn write_dataset(dir: &Path, counts: &CountMatrix, labels: &[usize]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ingest::write_dense_csv(counts, &dir.join("counts.csv"))?;
    ingest::write_labels(&dir.join("labels.csv"), "label", &counts.cell_ids, labels)
}
