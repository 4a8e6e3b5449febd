use crate::error::{Error, Result};

use super::Tensor;

/// Compressed-sparse-row matrix with at most one entry per `(row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets in any order.
    pub fn from_triplets(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = entries.to_vec();
        sorted.sort_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for (k, &(r, c, v)) in sorted.iter().enumerate() {
            if r >= rows || c >= cols {
                return Err(Error::shape(
                    "SparseMatrix::from_triplets",
                    format!("entry ({r}, {c}) outside {rows}x{cols}"),
                ));
            }
            if k > 0 && sorted[k - 1].0 == r && sorted[k - 1].1 == c {
                return Err(Error::invalid("entries", format!("duplicate entry ({r}, {c})")));
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self { rows, cols, indptr, indices, values })
    }

    /// Builds directly from per-row sorted column lists and values.
    pub(crate) fn from_csr(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(indptr.len(), rows + 1);
        debug_assert_eq!(indices.len(), values.len());
        Self { rows, cols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_csr(n, n, (0..=n).collect(), (0..n).collect(), vec![1.0; n])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|r| self.row_entries(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                t.set(r, c, v);
            }
        }
        t
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }

    /// `self * b` with `b` dense row-major `cols x m`.
    pub fn matmul_dense(&self, b: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * m];
        self.matmul_into(&self.values, b, m, &mut out);
        out
    }

    pub(crate) fn matmul_into(&self, values: &[f64], b: &[f64], m: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let dst = &mut out[r * m..(r + 1) * m];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let v = values[k];
                let src = &b[c * m..(c + 1) * m];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
    }

    /// `selfᵀ * g` accumulated into `out` (`cols x m`).
    pub(crate) fn t_matmul_acc(&self, values: &[f64], g: &[f64], m: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let src = &g[r * m..(r + 1) * m];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let v = values[k];
                let dst = &mut out[c * m..(c + 1) * m];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
    }

    /// Gradient w.r.t. entry values of `self * b` given upstream `g`:
    /// `d/dv_(r,c) = <g_r, b_c>`.
    pub(crate) fn value_grad(&self, b: &[f64], g: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for r in 0..self.rows {
            let gr = &g[r * m..(r + 1) * m];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let bc = &b[c * m..(c + 1) * m];
                out[k] = gr.iter().zip(bc).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// Sparse-sparse product, used for materializing operator powers.
    pub fn matmul_sparse(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul_sparse",
                format!("{}x{} * {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut acc = vec![0.0; other.cols];
        let mut touched = vec![false; other.cols];
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.rows {
            let mut cols_in_row = Vec::new();
            for (k, a) in self.row_entries(r) {
                for (c, b) in other.row_entries(k) {
                    if !touched[c] {
                        touched[c] = true;
                        cols_in_row.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols_in_row.sort_unstable();
            for c in cols_in_row {
                indices.push(c);
                values.push(acc[c]);
                acc[c] = 0.0;
                touched[c] = false;
            }
            indptr.push(indices.len());
        }
        Ok(SparseMatrix::from_csr(self.rows, other.cols, indptr, indices, values))
    }
}
