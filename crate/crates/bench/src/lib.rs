//! Fixtures shared by the kernel benchmarks.

use adagraph_core::config::TrainConfig;
use adagraph_core::ingest::{preprocess, PreprocessedData};
use adagraph_core::synth::{generate_zinb_mixture, SynthSpec};
use adagraph_core::{RngState, Tensor};

/// Uniform entries on `[-1, 1)`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    RngState::new(seed).sample_uniform(&[rows, cols]).map(|u| 2.0 * u - 1.0)
}

/// A preprocessed synthetic mixture with every gene kept.
pub fn synthetic_data(n_cells: usize, n_genes: usize, n_clusters: usize) -> PreprocessedData {
    let spec = SynthSpec { n_cells, n_genes, n_clusters, ..SynthSpec::default() };
    let (m, _) = generate_zinb_mixture(&spec, &mut RngState::new(spec.seed)).expect("valid spec");
    let kept = m.n_genes().min(n_genes);
    preprocess(&m, kept).expect("preprocess")
}

/// Small widths so one epoch stays in the millisecond range.
pub fn bench_config(clusters: usize) -> TrainConfig {
    TrainConfig {
        widths: vec![64, 32, 16],
        pretrain_epochs: 1,
        formal_epochs: 1,
        clusters: Some(clusters),
        kmeans_restarts: 2,
        ..TrainConfig::default()
    }
}
