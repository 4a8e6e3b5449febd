//! Training configuration: defaults, TOML documents, per-key overrides and
//! a stable content hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::objectives::{LossWeights, Temperatures};

/// Every tunable of a training run. Field names double as config keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Neighbors per cell, for both the KNN graph and the sampler.
    pub k: usize,
    /// Highly variable genes kept by preprocessing.
    pub hvg: usize,
    /// Highest adjacency power in each graph convolution.
    pub k_order: usize,
    pub widths: Vec<usize>,
    pub pretrain_epochs: usize,
    pub formal_epochs: usize,
    pub lr_pre: f64,
    pub lr_formal: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    /// Contrastive temperature.
    pub tau_c: f64,
    /// Fixed RBF bandwidth; the median heuristic when absent.
    pub sigma: Option<f64>,
    /// Number of clusters; required before training.
    pub clusters: Option<usize>,
    pub seed: u64,
    /// Epochs between target-distribution refreshes.
    pub p_refresh_interval: usize,
    pub kmeans_restarts: usize,
    pub disable_contrastive: bool,
    pub disable_adaptive_graph: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let t = Temperatures::default();
        Self {
            k: 15,
            hvg: 1500,
            k_order: 3,
            widths: vec![512, 256, 128],
            pretrain_epochs: 1000,
            formal_epochs: 300,
            lr_pre: 1e-2,
            lr_formal: 5e-4,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            lambda4: w.lambda4,
            tau: t.tau,
            tau_c: t.tau_c,
            sigma: None,
            clusters: None,
            seed: 0,
            p_refresh_interval: 1,
            kmeans_restarts: 20,
            disable_contrastive: false,
            disable_adaptive_graph: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "k",
    "hvg",
    "k_order",
    "widths",
    "pretrain_epochs",
    "formal_epochs",
    "lr_pre",
    "lr_formal",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "tau",
    "tau_c",
    "sigma",
    "clusters",
    "seed",
    "p_refresh_interval",
    "kmeans_restarts",
    "disable_contrastive",
    "disable_adaptive_graph",
];

fn config_err(key: &str, detail: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), detail: detail.into() }
}

fn typed<T: serde::de::DeserializeOwned>(key: &str, value: toml::Value) -> Result<T> {
    let shown = value.to_string();
    value.try_into().map_err(|e: toml::de::Error| config_err(key, format!("bad value {shown}: {}", e.message())))
}

impl TrainConfig {
    /// Applies a TOML document over `self`. Unknown keys and type mismatches
    /// name the key; ranges are checked by [`TrainConfig::validate`].
    pub fn merge_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err("<document>", e.message()))?;
        for (key, value) in table {
            self.set(&key, value)?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, value: toml::Value) -> Result<()> {
        match key {
            "k" => self.k = typed(key, value)?,
            "hvg" => self.hvg = typed(key, value)?,
            "k_order" => self.k_order = typed(key, value)?,
            "widths" => self.widths = typed(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = typed(key, value)?,
            "formal_epochs" => self.formal_epochs = typed(key, value)?,
            "lr_pre" => self.lr_pre = typed(key, value)?,
            "lr_formal" => self.lr_formal = typed(key, value)?,
            "lambda1" => self.lambda1 = typed(key, value)?,
            "lambda2" => self.lambda2 = typed(key, value)?,
            "lambda3" => self.lambda3 = typed(key, value)?,
            "lambda4" => self.lambda4 = typed(key, value)?,
            "tau" => self.tau = typed(key, value)?,
            "tau_c" => self.tau_c = typed(key, value)?,
            "sigma" => self.sigma = Some(typed(key, value)?),
            "clusters" => self.clusters = Some(typed(key, value)?),
            "seed" => self.seed = typed(key, value)?,
            "p_refresh_interval" => self.p_refresh_interval = typed(key, value)?,
            "kmeans_restarts" => self.kmeans_restarts = typed(key, value)?,
            "disable_contrastive" => self.disable_contrastive = typed(key, value)?,
            "disable_adaptive_graph" => self.disable_adaptive_graph = typed(key, value)?,
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Sets one key from command-line text, read as a TOML value with a
    /// bare-string fallback.
    pub fn set_str(&mut self, key: &str, text: &str) -> Result<()> {
        let value = format!("v = {text}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(text.to_string()));
        self.set(key, value)
    }

    /// Range checks; each failure names its key.
    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("k", self.k),
            ("hvg", self.hvg),
            ("p_refresh_interval", self.p_refresh_interval),
            ("kmeans_restarts", self.kmeans_restarts),
        ];
        for (key, v) in positive_counts {
            if v == 0 {
                return Err(config_err(key, "must be positive"));
            }
        }
        if self.clusters == Some(0) {
            return Err(config_err("clusters", "must be positive"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(config_err("widths", format!("need positive layer widths, got {:?}", self.widths)));
        }
        let positive_reals =
            [("lr_pre", self.lr_pre), ("lr_formal", self.lr_formal), ("tau", self.tau), ("tau_c", self.tau_c)];
        for (key, v) in positive_reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(key, format!("must be a positive finite number, got {v}")));
            }
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(config_err("sigma", format!("must be a positive finite number, got {s}")));
            }
        }
        let weights =
            [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3), ("lambda4", self.lambda4)];
        for (key, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(key, format!("must be a nonnegative finite number, got {v}")));
            }
        }
        Ok(())
    }

    /// Cluster count, or a config error when unset.
    pub fn require_clusters(&self) -> Result<usize> {
        self.clusters.ok_or_else(|| config_err("clusters", "required for training"))
    }

    /// Loss weights with ablations applied.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: if self.disable_contrastive { 0.0 } else { self.lambda3 },
            lambda4: self.lambda4,
        }
    }

    pub fn temperatures(&self) -> Temperatures {
        Temperatures { tau: self.tau, tau_c: self.tau_c }
    }

    pub fn architecture(&self, n_genes: usize) -> Architecture {
        Architecture { n_genes, widths: self.widths.clone(), k_order: self.k_order }
    }

    /// Canonical JSON with every default materialized.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`TrainConfig::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
