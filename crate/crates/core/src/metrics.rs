//! Partition agreement scores and degree-distribution comparison.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DegreeHistogram;

/// Counts of items per (predicted, true) label pair; labels are compacted to
/// `0..k` in order of first appearance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub n: usize,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

impl ContingencyTable {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::shape("contingency", format!("{} vs {} labels", a.len(), b.len())));
        }
        let (ca, ka) = compact(a);
        let (cb, kb) = compact(b);
        let mut counts = vec![vec![0usize; kb]; ka];
        for (&u, &v) in ca.iter().zip(&cb) {
            counts[u][v] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..kb).map(|v| counts.iter().map(|r| r[v]).sum()).collect();
        Ok(Self { counts, row_sums, col_sums, n: a.len() })
    }

    /// True when both partitions agree up to relabeling.
    pub fn is_bijective(&self) -> bool {
        self.row_sums.len() == self.col_sums.len()
            && self.counts.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1)
    }
}

fn entropy(sums: &[usize], n: f64) -> f64 {
    sums.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNorm {
    #[default]
    Geometric,
    Arithmetic,
}

/// Normalized mutual information, geometric-mean normalization.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    nmi_with(a, b, NmiNorm::Geometric)
}

pub fn nmi_with(a: &[usize], b: &[usize], norm: NmiNorm) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    if t.n == 0 {
        return Err(Error::EmptyMatrix("nmi".into()));
    }
    let n = t.n as f64;
    let (ha, hb) = (entropy(&t.row_sums, n), entropy(&t.col_sums, n));
    if ha == 0.0 || hb == 0.0 {
        return Ok(if t.is_bijective() { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (u, row) in t.counts.iter().enumerate() {
        for (v, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (t.row_sums[u] as f64 * t.col_sums[v] as f64)).ln();
            }
        }
    }
    let denom = match norm {
        NmiNorm::Geometric => (ha * hb).sqrt(),
        NmiNorm::Arithmetic => 0.5 * (ha + hb),
    };
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn comb2(x: usize) -> u128 {
    let x = x as u128;
    x * x.saturating_sub(1) / 2
}

/// Hubert–Arabie adjusted Rand index, evaluated on integer pair counts so
/// rational results come out exact.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    let index: u128 = t.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let sa: u128 = t.row_sums.iter().map(|&c| comb2(c)).sum();
    let sb: u128 = t.col_sums.iter().map(|&c| comb2(c)).sum();
    let total = comb2(t.n);
    // (index - sa sb / total) / ((sa + sb) / 2 - sa sb / total), scaled by 2 total
    let num = 2 * index as i128 * total as i128 - 2 * (sa * sb) as i128;
    let den = (sa + sb) as i128 * total as i128 - 2 * (sa * sb) as i128;
    if den == 0 {
        return Ok(if t.is_bijective() { 1.0 } else { 0.0 });
    }
    Ok(num as f64 / den as f64)
}

/// Shape change of a degree distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeComparison {
    pub delta_std: f64,
    pub delta_max: i64,
    pub skewness_before: f64,
    pub skewness_after: f64,
    pub tail_mitigated: bool,
}

pub fn compare_degree_distributions(before: &DegreeHistogram, after: &DegreeHistogram) -> Result<DegreeComparison> {
    if before.degrees.len() != after.degrees.len() {
        return Err(Error::shape(
            "compare_degree_distributions",
            format!("{} vs {} nodes", before.degrees.len(), after.degrees.len()),
        ));
    }
    Ok(DegreeComparison {
        delta_std: after.std - before.std,
        delta_max: after.max as i64 - before.max as i64,
        skewness_before: before.skewness(),
        skewness_after: after.skewness(),
        tail_mitigated: after.std <= before.std && after.max <= before.max,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nmi: f64,
    pub ari: f64,
    pub n_cells: usize,
    pub n_clusters_pred: usize,
    pub n_clusters_true: usize,
}

pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<MetricsReport> {
    let t = ContingencyTable::new(pred, truth)?;
    Ok(MetricsReport {
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
        n_cells: t.n,
        n_clusters_pred: t.row_sums.len(),
        n_clusters_true: t.col_sums.len(),
    })
}
