//! Count-matrix loading and preprocessing.
//!
//! Raw counts are kept sparse (cells as rows). Preprocessing removes
//! all-zero genes, library-size normalizes to the median total, applies
//! `ln(1 + x)`, and keeps the most variable genes by binned normalized
//! dispersion. The selected genes are returned twice: log-normalized for the
//! encoder and as raw counts for the count likelihood.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Input file layouts understood by [`load_matrix`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    /// Header row of gene ids, first column of cell ids.
    DenseCsv,
    /// Coordinate MatrixMarket with `genes.txt` / `barcodes.txt` sidecars.
    MatrixMarket,
}

impl std::str::FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-csv" => Ok(Self::DenseCsv),
            "matrix-market" => Ok(Self::MatrixMarket),
            other => Err(Error::invalid("format", format!("unknown format `{other}`"))),
        }
    }
}

/// Raw nonnegative integer counts, cells x genes, stored row-compressed.
#[derive(Clone, Debug, PartialEq)]
pub struct CountMatrix {
    n_cells: usize,
    n_genes: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<u32>,
    pub cell_ids: Vec<String>,
    pub gene_ids: Vec<String>,
}

impl CountMatrix {
    /// Builds from dense rows.
    pub fn from_dense(
        counts: &[Vec<u32>],
        cell_ids: Vec<String>,
        gene_ids: Vec<String>,
    ) -> Result<Self> {
        let n_genes = gene_ids.len();
        let mut triplets = Vec::new();
        for (i, row) in counts.iter().enumerate() {
            if row.len() != n_genes {
                return Err(Error::shape(
                    "CountMatrix::from_dense",
                    format!("row {i} has {} values for {n_genes} genes", row.len()),
                ));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(cell_ids, gene_ids, triplets)
    }

    /// Builds from `(cell, gene, count)` triplets. Zero counts are dropped.
    pub fn from_triplets(
        cell_ids: Vec<String>,
        gene_ids: Vec<String>,
        mut triplets: Vec<(usize, usize, u32)>,
    ) -> Result<Self> {
        let (n_cells, n_genes) = (cell_ids.len(), gene_ids.len());
        let mut seen = HashSet::with_capacity(n_genes);
        for g in &gene_ids {
            if !seen.insert(g.as_str()) {
                return Err(Error::invalid("gene_ids", format!("duplicate gene id `{g}`")));
            }
        }
        triplets.retain(|t| t.2 != 0);
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; n_cells + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for (k, &(i, j, v)) in triplets.iter().enumerate() {
            if i >= n_cells || j >= n_genes {
                return Err(Error::shape(
                    "CountMatrix",
                    format!("entry ({i}, {j}) outside {n_cells}x{n_genes}"),
                ));
            }
            if k > 0 && triplets[k - 1].0 == i && triplets[k - 1].1 == j {
                return Err(Error::invalid("entries", format!("duplicate entry ({i}, {j})")));
            }
            indptr[i + 1] += 1;
            indices.push(j as u32);
            values.push(v);
        }
        for i in 0..n_cells {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self { n_cells, n_genes, indptr, indices, values, cell_ids, gene_ids })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero `(gene, count)` pairs of one cell, in gene order.
    pub fn cell(&self, i: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().map(|&j| j as usize).zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.cell(i).find(|&(g, _)| g == j).map_or(0, |(_, v)| v)
    }

    pub fn cell_total(&self, i: usize) -> u64 {
        self.cell(i).map(|(_, v)| u64::from(v)).sum()
    }

    pub fn gene_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.n_genes];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            totals[j as usize] += u64::from(v);
        }
        totals
    }

    pub fn to_dense(&self) -> Vec<Vec<u32>> {
        let mut out = vec![vec![0u32; self.n_genes]; self.n_cells];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.cell(i) {
                row[j] = v;
            }
        }
        out
    }

    /// Dense submatrix over the given gene columns, as reals.
    pub fn dense_columns(&self, genes: &[usize]) -> Tensor {
        let mut position = vec![usize::MAX; self.n_genes];
        for (k, &g) in genes.iter().enumerate() {
            position[g] = k;
        }
        let mut t = Tensor::zeros(&[self.n_cells, genes.len()]);
        for i in 0..self.n_cells {
            for (j, v) in self.cell(i) {
                if position[j] != usize::MAX {
                    t.set(i, position[j], f64::from(v));
                }
            }
        }
        t
    }

    /// Keeps the given genes, in the given order.
    pub fn select_genes(&self, genes: &[usize]) -> Self {
        let mut position = vec![usize::MAX; self.n_genes];
        for (k, &g) in genes.iter().enumerate() {
            position[g] = k;
        }
        let mut triplets = Vec::new();
        for i in 0..self.n_cells {
            for (j, v) in self.cell(i) {
                if position[j] != usize::MAX {
                    triplets.push((i, position[j], v));
                }
            }
        }
        let gene_ids = genes.iter().map(|&g| self.gene_ids[g].clone()).collect();
        Self::from_triplets(self.cell_ids.clone(), gene_ids, triplets).expect("subset of a valid matrix")
    }
}

/// Loads a count matrix; cells become rows.
pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<CountMatrix> {
    match format {
        MatrixFormat::DenseCsv => load_dense_csv(path),
        MatrixFormat::MatrixMarket => load_matrix_market(path),
    }
}

fn parse_count(raw: &str, path: &Path, line: usize, cell: usize, gene: usize) -> Result<u32> {
    let raw = raw.trim();
    let value: i64 = match raw.parse::<i64>() {
        Ok(v) => v,
        Err(_) => match raw.parse::<f64>() {
            Ok(f) if f.is_finite() && f.fract() == 0.0 => f as i64,
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    detail: format!("`{raw}` is not an integer count"),
                })
            }
        },
    };
    if value < 0 {
        return Err(Error::NegativeCount { cell, gene, value });
    }
    u32::try_from(value).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail: format!("count {value} out of range"),
    })
}

fn load_dense_csv(path: &Path) -> Result<CountMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(parse_err(path, 1, "empty file")),
    };
    if header.len() < 2 {
        return Err(parse_err(path, 1, "header needs a corner cell and at least one gene id"));
    }
    let gene_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut cell_ids = Vec::new();
    let mut triplets = Vec::new();
    for (k, record) in records.enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != gene_ids.len() + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", gene_ids.len() + 1, record.len()),
            ));
        }
        let cell = cell_ids.len();
        cell_ids.push(record[0].trim().to_string());
        for (j, field) in record.iter().skip(1).enumerate() {
            let v = parse_count(field, path, line, cell, j)?;
            if v != 0 {
                triplets.push((cell, j, v));
            }
        }
    }
    CountMatrix::from_triplets(cell_ids, gene_ids, triplets)
}

fn read_id_file(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn load_matrix_market(path: &Path) -> Result<CountMatrix> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5
        || tokens[0] != "%%matrixmarket"
        || tokens[1] != "matrix"
        || tokens[2] != "coordinate"
        || !(tokens[3] == "integer" || tokens[3] == "real")
        || tokens[4] != "general"
    {
        return Err(parse_err(
            path,
            1,
            format!("unsupported header `{header}`; expected `%%MatrixMarket matrix coordinate integer general`"),
        ));
    }
    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (k, line) in lines {
        let line_no = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(path, line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let index = |s: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| parse_err(path, line_no, format!("`{s}` is not an index")))
        };
        match size {
            None => size = Some((index(fields[0])?, index(fields[1])?, index(fields[2])?)),
            Some((rows, cols, _)) => {
                let (i, j) = (index(fields[0])?, index(fields[1])?);
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("index ({i}, {j}) outside 1..={rows} x 1..={cols}"),
                    ));
                }
                let v = parse_count(fields[2], path, line_no, i - 1, j - 1)?;
                triplets.push((i - 1, j - 1, v));
            }
        }
    }
    let (rows, cols, nnz) = size.ok_or_else(|| parse_err(path, 2, "missing size line"))?;
    if triplets.len() != nnz {
        return Err(parse_err(path, 2, format!("size line declares {nnz} entries, found {}", triplets.len())));
    }
    let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let gene_ids = read_id_file(&dir.join("genes.txt"))?;
    let cell_ids = read_id_file(&dir.join("barcodes.txt"))?;
    if gene_ids.len() != cols || cell_ids.len() != rows {
        return Err(Error::shape(
            "load_matrix",
            format!(
                "matrix is {rows}x{cols} but barcodes.txt has {} and genes.txt has {} ids",
                cell_ids.len(),
                gene_ids.len()
            ),
        ));
    }
    CountMatrix::from_triplets(cell_ids, gene_ids, triplets)
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, detail: detail.into() }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(path, line, e.to_string())
}

/// Writes a count matrix as dense CSV (header row of gene ids, first column
/// of cell ids).
pub fn write_dense_csv(m: &CountMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["cell_id".to_string()];
    header.extend(m.gene_ids.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let dense = m.to_dense();
    for (id, row) in m.cell_ids.iter().zip(dense) {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(id.clone());
        rec.extend(row.iter().map(u32::to_string));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a two-column `cell_id,label` CSV with a header row.
pub fn load_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 2 {
            return Err(parse_err(path, k + 2, format!("expected 2 fields, found {}", record.len())));
        }
        out.push((record[0].trim().to_string(), record[1].trim().to_string()));
    }
    Ok(out)
}

/// Writes `cell_id,<column>` rows.
pub fn write_labels<L: ToString>(path: &Path, column: &str, cells: &[String], labels: &[L]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["cell_id", column]).map_err(|e| csv_error(path, e))?;
    for (c, l) in cells.iter().zip(labels) {
        w.write_record([c.as_str(), &l.to_string()]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Maps arbitrary label strings to dense indices by first appearance.
pub fn encode_labels(labels: &[String]) -> Vec<usize> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l.as_str()).or_insert(next)
        })
        .collect()
}

/// Drops genes whose count is zero in every cell.
pub fn filter_zero_genes(m: &CountMatrix) -> Result<CountMatrix> {
    let keep: Vec<usize> =
        m.gene_totals().iter().enumerate().filter(|(_, &t)| t > 0).map(|(j, _)| j).collect();
    if keep.is_empty() {
        return Err(Error::EmptyMatrix("every gene has zero counts".into()));
    }
    if keep.len() == m.n_genes() {
        return Ok(m.clone());
    }
    Ok(m.select_genes(&keep))
}

/// Log-normalized expression with the same sparsity pattern as the counts.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMatrix {
    n_cells: usize,
    n_genes: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl LogMatrix {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn cell(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().map(|&j| j as usize).zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        self.dense_columns(&(0..self.n_genes).collect::<Vec<_>>())
    }

    pub fn dense_columns(&self, genes: &[usize]) -> Tensor {
        let mut position = vec![usize::MAX; self.n_genes];
        for (k, &g) in genes.iter().enumerate() {
            position[g] = k;
        }
        let mut t = Tensor::zeros(&[self.n_cells, genes.len()]);
        for i in 0..self.n_cells {
            for (j, v) in self.cell(i) {
                if position[j] != usize::MAX {
                    t.set(i, position[j], v);
                }
            }
        }
        t
    }

    /// Per-gene mean and sample variance (ddof = 1). Genes whose values are
    /// identical in every cell get a variance of exactly zero.
    pub fn gene_mean_var(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_cells as f64;
        let g = self.n_genes;
        let mut sum = vec![0.0; g];
        let mut nnz = vec![0usize; g];
        let mut lo = vec![f64::INFINITY; g];
        let mut hi = vec![f64::NEG_INFINITY; g];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            let j = j as usize;
            sum[j] += v;
            nnz[j] += 1;
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut ss = vec![0.0; g];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            let j = j as usize;
            ss[j] += (v - mean[j]).powi(2);
        }
        let var = (0..g)
            .map(|j| {
                let implicit_zeros = self.n_cells - nnz[j];
                let constant = if implicit_zeros == 0 { lo[j] == hi[j] } else { nnz[j] == 0 || (lo[j] == 0.0 && hi[j] == 0.0) };
                if constant || self.n_cells < 2 {
                    0.0
                } else {
                    (ss[j] + implicit_zeros as f64 * mean[j] * mean[j]) / (n - 1.0)
                }
            })
            .collect();
        (mean, var)
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `x_log[i, j] = ln(1 + counts[i, j] * median_total / total_i)`, with
/// `size_factor_i = total_i / median_total`.
pub fn normalize_log(m: &CountMatrix) -> Result<(LogMatrix, Vec<f64>)> {
    if m.n_cells() == 0 {
        return Err(Error::EmptyMatrix("no cells".into()));
    }
    let totals: Vec<f64> = (0..m.n_cells()).map(|i| m.cell_total(i) as f64).collect();
    if let Some(i) = totals.iter().position(|&t| t <= 0.0) {
        return Err(Error::DegenerateCell { cell_id: m.cell_ids[i].clone() });
    }
    let target = median(&totals);
    let size_factors: Vec<f64> = totals.iter().map(|t| t / target).collect();
    let mut values = Vec::with_capacity(m.nnz());
    for (i, &total) in totals.iter().enumerate() {
        for (_, v) in m.cell(i) {
            values.push((f64::from(v) * target / total).ln_1p());
        }
    }
    let log = LogMatrix {
        n_cells: m.n_cells,
        n_genes: m.n_genes,
        indptr: m.indptr.clone(),
        indices: m.indices.clone(),
        values,
    };
    Ok((log, size_factors))
}

/// Default number of mean bins for dispersion normalization.
pub const DEFAULT_HVG_BINS: usize = 20;

/// Normalized dispersion per gene: within equal-frequency bins of mean
/// expression, the z-score of `variance / mean`.
pub fn normalized_dispersion(x_log: &LogMatrix, n_bins: usize) -> (Vec<f64>, Vec<f64>) {
    let (mean, var) = x_log.gene_mean_var();
    let g = mean.len();
    let dispersion: Vec<f64> =
        mean.iter().zip(&var).map(|(&m, &v)| if m > 0.0 { v / m } else { 0.0 }).collect();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(a.cmp(&b)));
    let n_bins = n_bins.max(1);
    let mut bin = vec![0usize; g];
    for (rank, &j) in order.iter().enumerate() {
        bin[j] = rank * n_bins / g;
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for j in 0..g {
        members[bin[j]].push(j);
    }
    let mut z = vec![0.0; g];
    for genes in &members {
        if genes.len() < 2 {
            continue;
        }
        let k = genes.len() as f64;
        let mu = genes.iter().map(|&j| dispersion[j]).sum::<f64>() / k;
        let sd = (genes.iter().map(|&j| (dispersion[j] - mu).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        if sd > 0.0 {
            for &j in genes {
                z[j] = (dispersion[j] - mu) / sd;
            }
        }
    }
    (z, dispersion)
}

/// Indices (ascending) of the `m` genes with the highest normalized
/// dispersion. Zero-dispersion genes rank after every other gene; ties go
/// to the smaller index.
pub fn select_hvg(x_log: &LogMatrix, m: usize) -> Result<Vec<usize>> {
    select_hvg_binned(x_log, m, DEFAULT_HVG_BINS)
}

pub fn select_hvg_binned(x_log: &LogMatrix, m: usize, n_bins: usize) -> Result<Vec<usize>> {
    let g = x_log.n_genes();
    if m == 0 || m > g {
        return Err(Error::invalid("hvg", format!("must be in 1..={g}, got {m}")));
    }
    let (z, dispersion) = normalized_dispersion(x_log, n_bins);
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| {
        let flat = |j: usize| dispersion[j] <= 0.0;
        flat(a).cmp(&flat(b)).then(z[b].total_cmp(&z[a])).then(a.cmp(&b))
    });
    let mut chosen = order[..m].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Inputs to training, restricted to the selected genes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedData {
    /// Log-normalized expression, N x M.
    pub x_log: Tensor,
    /// Raw integer counts at the same genes, N x M.
    pub x_raw: Tensor,
    pub size_factors: Vec<f64>,
    /// Indices into the zero-filtered gene list.
    pub hvg_indices: Vec<usize>,
    pub cell_ids: Vec<String>,
    /// Ids of the selected genes.
    pub gene_ids: Vec<String>,
}

impl PreprocessedData {
    pub fn n_cells(&self) -> usize {
        self.x_log.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.x_log.cols()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Zero-gene filter, log normalization and HVG selection.
pub fn preprocess(m: &CountMatrix, n_hvg: usize) -> Result<PreprocessedData> {
    preprocess_binned(m, n_hvg, DEFAULT_HVG_BINS)
}

pub fn preprocess_binned(m: &CountMatrix, n_hvg: usize, n_bins: usize) -> Result<PreprocessedData> {
    let filtered = filter_zero_genes(m)?;
    let (x_log_all, size_factors) = normalize_log(&filtered)?;
    let hvg_indices = select_hvg_binned(&x_log_all, n_hvg, n_bins)?;
    Ok(PreprocessedData {
        x_log: x_log_all.dense_columns(&hvg_indices),
        x_raw: filtered.dense_columns(&hvg_indices),
        size_factors,
        gene_ids: hvg_indices.iter().map(|&j| filtered.gene_ids[j].clone()).collect(),
        hvg_indices,
        cell_ids: filtered.cell_ids.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn filter_drops_zero_columns_only() {
        let m = CountMatrix::from_dense(&[vec![0, 1], vec![0, 2]], ids("c", 2), ids("g", 2)).unwrap();
        let f = filter_zero_genes(&m).unwrap();
        assert_eq!(f.to_dense(), vec![vec![1], vec![2]]);
        assert_eq!(f.gene_ids, vec!["g1"]);

        let full = CountMatrix::from_dense(&[vec![1, 1], vec![0, 2]], ids("c", 2), ids("g", 2)).unwrap();
        assert_eq!(filter_zero_genes(&full).unwrap(), full);

        let empty = CountMatrix::from_dense(&[vec![0, 0]], ids("c", 1), ids("g", 2)).unwrap();
        assert!(matches!(filter_zero_genes(&empty), Err(Error::EmptyMatrix(_))));
    }

    #[test]
    fn normalize_single_cell() {
        let m = CountMatrix::from_dense(&[vec![1, 1, 2]], ids("c", 1), ids("g", 3)).unwrap();
        let (x, sf) = normalize_log(&m).unwrap();
        let d = x.to_dense();
        let expected = [2f64.ln(), 2f64.ln(), 3f64.ln()];
        for (a, b) in d.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(sf, vec![1.0]);
    }

    #[test]
    fn normalize_zero_stays_zero_and_size_factors_use_median() {
        let m = CountMatrix::from_dense(&[vec![4, 0], vec![4, 4]], ids("c", 2), ids("g", 2)).unwrap();
        let (x, sf) = normalize_log(&m).unwrap();
        assert_eq!(x.to_dense().get(0, 1), 0.0);
        assert!((sf[0] - 4.0 / 6.0).abs() < 1e-15);
        assert!((sf[1] - 8.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn zero_total_cell_is_named() {
        let m = CountMatrix::from_dense(&[vec![1, 0], vec![0, 0]], ids("c", 2), ids("g", 2)).unwrap();
        match normalize_log(&m) {
            Err(Error::DegenerateCell { cell_id }) => assert_eq!(cell_id, "c1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hvg_bounds() {
        let m = CountMatrix::from_dense(&[vec![1, 2, 3], vec![3, 2, 1]], ids("c", 2), ids("g", 3)).unwrap();
        let (x, _) = normalize_log(&m).unwrap();
        assert!(select_hvg(&x, 0).is_err());
        assert!(select_hvg(&x, 4).is_err());
        assert_eq!(select_hvg(&x, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_gene_ids_rejected() {
        let r = CountMatrix::from_dense(&[vec![1, 2]], ids("c", 1), vec!["a".into(), "a".into()]);
        assert!(r.is_err());
    }
}
