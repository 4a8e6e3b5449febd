//! Batch front end: `preprocess`, `train`, `eval`, `diag` and `synth`.
//!
//! Every command returns a JSON summary that the binary prints on standard
//! output. Progress goes to standard error through `log`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use adagraph_core::checkpoint::{write_atomic, Checkpoint};
use adagraph_core::config::TrainConfig;
use adagraph_core::graph::{degree_stats, BinaryAdjacency};
use adagraph_core::ingest::{self, load_labels, load_matrix, MatrixFormat, PreprocessedData};
use adagraph_core::metrics::{compare_degree_distributions, evaluate};
use adagraph_core::synth::{self, SynthSpec};
use adagraph_core::trainer::Trainer;
use adagraph_core::RngState;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub const CACHE_FILE: &str = "preprocessed.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const LABELS_FILE: &str = "labels.csv";
pub const GRAPH_INITIAL_FILE: &str = "graph_initial.json";
pub const GRAPH_FINAL_FILE: &str = "graph_final.json";
pub const DEGREES_INITIAL_FILE: &str = "degrees_initial.json";
pub const DEGREES_FINAL_FILE: &str = "degrees_final.json";
pub const DEGREE_COMPARISON_FILE: &str = "degree_comparison.json";

#[derive(Parser, Debug)]
#[command(name = "adagraph", version, about = "Adaptive-graph clustering of single-cell count matrices")]
pub struct Cli {
    /// Worker threads for dense kernels; 1 gives bit-identical reruns.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// More progress output on standard error (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filter, normalize and select genes; writes a cache directory.
    Preprocess(PreprocessArgs),
    /// Train on a cache; writes a run directory.
    Train(TrainArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Degree reports for a run's initial and learned graphs.
    Diag(DiagArgs),
    /// Write a synthetic dataset with known labels.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "dense-csv")]
    pub format: String,
    /// Number of highly variable genes; overrides the config file.
    #[arg(long)]
    pub hvg: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML document of config keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub formal_epochs: Option<usize>,
    #[arg(long)]
    pub lr_pre: Option<f64>,
    #[arg(long)]
    pub lr_formal: Option<f64>,
    /// Drop the contrastive term.
    #[arg(long)]
    pub no_contrastive: bool,
    /// Keep the initial KNN graph for all epochs.
    #[arg(long)]
    pub static_graph: bool,
    /// Any config key as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Epochs between checkpoints; 0 writes only the final one.
    #[arg(long, default_value_t = 50)]
    pub checkpoint_every: usize,
    /// Checkpoint and exit after this many epochs; continue later with `--resume`.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// `cell_id,cluster` CSV.
    #[arg(long)]
    pub labels: PathBuf,
    /// `cell_id,label` CSV.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiagArgs {
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// TOML spec; `kind = "longtail"` selects the hub-heavy point set.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance of a training run, written before the first epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub config_hash: String,
    pub inputs: Vec<InputDigest>,
    /// Output file names, relative to the run directory.
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Parameters of the long-tail point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongtailSpec {
    pub n_cells: usize,
    pub n_genes: usize,
    pub seed: u64,
}

impl Default for LongtailSpec {
    fn default() -> Self {
        Self { n_cells: 1000, n_genes: 50, seed: 0 }
    }
}

/// Category and exit status of a failure.
pub fn classify(err: &anyhow::Error) -> (&'static str, i32) {
    use adagraph_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config { .. } | E::InvalidArgument { .. } => ("config", 2),
                E::Io { .. } => ("io", 3),
                E::Parse { .. } | E::NegativeCount { .. } | E::DegenerateCell { .. } | E::EmptyMatrix(_) => {
                    ("data", 4)
                }
                E::Shape { .. } => ("shape", 4),
                E::NumericDomain { .. } | E::NonFiniteGradient(_) | E::NonFiniteLoss { .. } | E::NonScalarLoss(_) => {
                    ("numeric", 5)
                }
                E::Checkpoint(_) => ("checkpoint", 6),
                E::Json(_) => ("data", 4),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("io", 3);
        }
    }
    ("error", 1)
}

/// Single-line JSON error report.
pub fn error_line(err: &anyhow::Error) -> (i32, String) {
    let (kind, code) = classify(err);
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|prev| prev.contains(&text)) {
            parts.push(text);
        }
    }
    let message = parts.join(": ").replace('\n', " ");
    (code, json!({ "error": kind, "message": message }).to_string())
}

/// Caps dense-kernel worker threads; must run before any kernel.
pub fn set_threads(n: usize) {
    std::env::set_var("MATMUL_NUM_THREADS", n.max(1).to_string());
}

pub fn run(cli: Cli) -> Result<serde_json::Value> {
    set_threads(cli.threads);
    match cli.command {
        Command::Preprocess(a) => preprocess(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Diag(a) => diag(&a),
        Command::Synth(a) => synthesize(&a),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| adagraph_core::Error::Io { path: path.to_path_buf(), source: e }.into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| adagraph_core::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| adagraph_core::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = path {
        cfg.merge_toml(&read_to_string(p)?)?;
    }
    Ok(cfg)
}

fn preprocess(a: &PreprocessArgs) -> Result<serde_json::Value> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(h) = a.hvg {
        cfg.hvg = h;
    }
    cfg.validate()?;
    let format: MatrixFormat = a.format.parse()?;
    let m = load_matrix(&a.input, format)?;
    log::info!("loaded {} cells x {} genes", m.n_cells(), m.n_genes());
    let data = ingest::preprocess(&m, cfg.hvg)?;
    create_dir(&a.out)?;
    let path = a.out.join(CACHE_FILE);
    write_atomic(&path, serde_json::to_string(&data)?.as_bytes())?;
    Ok(json!({
        "cache": path,
        "n_cells": data.n_cells(),
        "n_genes": data.n_genes(),
    }))
}

/// Config from defaults, then the file, then `--set`, then dedicated flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = load_config(a.config.as_deref())?;
    for pair in &a.set {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(adagraph_core::Error::Config { key: pair.clone(), detail: "expected KEY=VALUE".into() }.into());
        };
        cfg.set_str(key.trim(), value.trim())?;
    }
    if let Some(v) = a.clusters {
        cfg.clusters = Some(v);
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if let Some(v) = a.pretrain_epochs {
        cfg.pretrain_epochs = v;
    }
    if let Some(v) = a.formal_epochs {
        cfg.formal_epochs = v;
    }
    if let Some(v) = a.lr_pre {
        cfg.lr_pre = v;
    }
    if let Some(v) = a.lr_formal {
        cfg.lr_formal = v;
    }
    cfg.disable_contrastive |= a.no_contrastive;
    cfg.disable_adaptive_graph |= a.static_graph;
    cfg.validate()?;
    cfg.require_clusters()?;
    Ok(cfg)
}

fn save_progress(dir: &Path, t: &Trainer) -> Result<()> {
    t.to_checkpoint()?.save(&dir.join(CHECKPOINT_FILE))?;
    write_atomic(&dir.join(TRACE_FILE), t.trace().to_jsonl()?.as_bytes())?;
    Ok(())
}

fn train(a: &TrainArgs) -> Result<serde_json::Value> {
    let cfg = resolve_train_config(a)?;
    let cache = a.cache.join(CACHE_FILE);
    let data: PreprocessedData = read_json(&cache)?;
    create_dir(&a.out)?;
    let manifest = RunManifest {
        tool: "adagraph".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        inputs: vec![InputDigest { path: cache.display().to_string(), sha256: sha256_file(&cache)? }],
        outputs: [
            MANIFEST_FILE,
            CHECKPOINT_FILE,
            TRACE_FILE,
            LABELS_FILE,
            GRAPH_INITIAL_FILE,
            GRAPH_FINAL_FILE,
        ]
        .map(String::from)
        .to_vec(),
    };
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    let mut trainer = if a.resume {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let t = Trainer::from_checkpoint(&data, cfg.clone(), &ckpt)?;
        log::info!(
            "resuming at pre-training epoch {}, clustering epoch {}",
            t.pretrain_epochs_done(),
            t.cluster_epochs_done()
        );
        t
    } else {
        Trainer::new(&data, cfg.clone())?
    };
    write_json(&a.out.join(MANIFEST_FILE), &manifest)?;
    write_json(&a.out.join(GRAPH_INITIAL_FILE), trainer.knn_graph())?;

    let every = a.checkpoint_every;
    let out = a.out.clone();
    let result = trainer.run_for(a.stop_after.unwrap_or(usize::MAX), |t, rec| {
        let done = t.pretrain_epochs_done() + t.cluster_epochs_done();
        if rec.loss.epoch % 10 == 0 {
            log::info!(
                "{} epoch {}: total {:.5} (graph {:.5}, zinb {:.5}, contrastive {:.5}, kl {:.5}), degree mean {:.1} max {}",
                rec.loss.phase,
                rec.loss.epoch,
                rec.loss.total,
                rec.loss.l_g,
                rec.loss.l_zinb,
                rec.loss.l_cg,
                rec.loss.l_kl,
                rec.degree.mean,
                rec.degree.max
            );
        }
        if every > 0 && done % every == 0 {
            save_progress(&out, t).map_err(|e| adagraph_core::Error::Checkpoint(format!("{e:#}")))?;
        }
        Ok(())
    });
    if let Err(e) = result {
        save_progress(&a.out, &trainer)?;
        return Err(anyhow::Error::new(e).context("training stopped; last good state saved"));
    }
    save_progress(&a.out, &trainer)?;
    if !trainer.finished() {
        return Ok(json!({
            "run": a.out,
            "finished": false,
            "pretrain_epochs_done": trainer.pretrain_epochs_done(),
            "cluster_epochs_done": trainer.cluster_epochs_done(),
        }));
    }
    let pred = trainer.predict()?;
    let labels = pred.labels.expect("clustering finished");
    ingest::write_labels(&a.out.join(LABELS_FILE), "cluster", &data.cell_ids, &labels)?;
    write_json(&a.out.join(GRAPH_FINAL_FILE), trainer.graph())?;
    let last = trainer.trace().records.last().map(|r| r.loss.total);
    Ok(json!({
        "run": a.out,
        "finished": true,
        "n_cells": data.n_cells(),
        "clusters": cfg.clusters,
        "epochs": trainer.trace().records.len(),
        "final_loss": last,
        "config_hash": manifest.config_hash,
    }))
}

fn eval(a: &EvalArgs) -> Result<serde_json::Value> {
    let pred = load_labels(&a.labels)?;
    let truth = load_labels(&a.truth)?;
    let truth: HashMap<String, String> = truth.into_iter().collect();
    let mut p = Vec::with_capacity(pred.len());
    let mut t = Vec::with_capacity(pred.len());
    for (cell, label) in pred {
        let Some(tl) = truth.get(&cell) else {
            bail!(adagraph_core::Error::Config {
                key: "truth".into(),
                detail: format!("cell `{cell}` has no ground-truth label")
            });
        };
        p.push(label);
        t.push(tl.clone());
    }
    let report = evaluate(&ingest::encode_labels(&p), &ingest::encode_labels(&t))?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(serde_json::to_value(report)?)
}

fn diag(a: &DiagArgs) -> Result<serde_json::Value> {
    let initial: BinaryAdjacency = read_json(&a.run.join(GRAPH_INITIAL_FILE))?;
    let learned: BinaryAdjacency = read_json(&a.run.join(GRAPH_FINAL_FILE))?;
    let before = degree_stats(&initial);
    let after = degree_stats(&learned);
    write_atomic(&a.run.join(DEGREES_INITIAL_FILE), before.to_json()?.as_bytes())?;
    write_atomic(&a.run.join(DEGREES_FINAL_FILE), after.to_json()?.as_bytes())?;
    let cmp = compare_degree_distributions(&before, &after)?;
    write_json(&a.run.join(DEGREE_COMPARISON_FILE), &cmp)?;
    Ok(serde_json::to_value(cmp)?)
}

fn synthesize(a: &SynthArgs) -> Result<serde_json::Value> {
    let text = read_to_string(&a.spec)?;
    let mut table: toml::Table =
        text.parse().map_err(|e: toml::de::Error| adagraph_core::Error::Config { key: "spec".into(), detail: e.message().into() })?;
    let kind = match table.remove("kind") {
        None => "zinb".to_string(),
        Some(toml::Value::String(s)) => s,
        Some(other) => bail!(adagraph_core::Error::Config { key: "kind".into(), detail: format!("expected a string, got {other}") }),
    };
    create_dir(&a.out)?;
    match kind.as_str() {
        "zinb" => {
            let spec = SynthSpec::from_toml(&table.to_string())?;
            spec.validate()?;
            let (m, labels) = synth::generate_zinb_mixture(&spec, &mut RngState::new(spec.seed))?;
            synth::write_dataset(&a.out, &m, &labels)?;
            write_json(&a.out.join("spec.json"), &spec)?;
            Ok(json!({ "kind": kind, "n_cells": m.n_cells(), "n_genes": m.n_genes(), "out": a.out }))
        }
        "longtail" => {
            let spec: LongtailSpec = table
                .try_into()
                .map_err(|e: toml::de::Error| adagraph_core::Error::Config { key: "spec".into(), detail: e.message().into() })?;
            let (data, labels) = synth::longtail_dataset(spec.n_cells, spec.n_genes, &mut RngState::new(spec.seed))?;
            let rows: Vec<Vec<u32>> =
                (0..data.n_cells()).map(|i| data.x_raw.row(i).iter().map(|&v| v as u32).collect()).collect();
            let counts = ingest::CountMatrix::from_dense(&rows, data.cell_ids.clone(), data.gene_ids.clone())?;
            synth::write_dataset(&a.out, &counts, &labels)?;
            write_atomic(&a.out.join(CACHE_FILE), serde_json::to_string(&data)?.as_bytes())?;
            write_json(&a.out.join("spec.json"), &spec)?;
            Ok(json!({ "kind": kind, "n_cells": spec.n_cells, "n_genes": spec.n_genes, "out": a.out }))
        }
        other => bail!(adagraph_core::Error::Config {
            key: "kind".into(),
            detail: format!("unknown dataset kind `{other}` (zinb, longtail)")
        }),
    }
}
