use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentPolicy;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, PseudoLabelConfig};
use crate::model::{Activation, BackboneKind};

/// Every knob of a training run. Defaults are the published hyperparameters;
/// desk-scale presets override the run length and batch sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `synthetic`, `cifar10:DIR`, `cifar100:DIR` or `dir:DIR`.
    pub dataset: String,
    /// Word-embedding file used to look up class-name vectors.
    pub embeddings: Option<String>,
    /// Ready-made label matrix (text embedding format, one row per class).
    pub label_vectors: Option<String>,
    /// Class attribute CSV, reduced to `emb_dim` with PCA.
    pub attributes: Option<String>,
    pub emb_dim: usize,

    pub n_labeled: usize,
    pub mu: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr_max: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,

    pub tau_e: f64,
    pub tau_o: f64,
    pub lambda_u: f64,
    pub lambda_co: f64,
    pub sc_scale: f64,
    pub eps: f64,
    pub temp: f64,

    pub backbone: BackboneKind,
    pub conv_channels: [usize; 2],
    pub hidden: usize,
    pub activation: Activation,

    pub n_ops: usize,
    pub magnitude: u32,
    /// Cutout square side as a fraction of the image side; 0 disables it.
    pub cutout: f64,

    pub seed: u64,
    /// Seed of the synthetic dataset, kept apart from the run seed.
    pub data_seed: u64,
    pub synthetic_image_size: usize,
    pub synthetic_train_per_class: usize,
    pub synthetic_test_per_class: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            embeddings: None,
            label_vectors: None,
            attributes: None,
            emb_dim: 128,
            n_labeled: 32,
            mu: 3,
            batch_size: 64,
            epochs: 300,
            steps_per_epoch: 1024,
            lr_max: 0.03,
            warmup_epochs: 10,
            momentum: 0.9,
            weight_decay: 5e-4,
            ema_decay: 0.999,
            tau_e: 0.70,
            tau_o: 0.95,
            lambda_u: 1.0,
            lambda_co: 1.0,
            sc_scale: 3.0,
            eps: 0.2,
            temp: 0.1,
            backbone: BackboneKind::Conv,
            conv_channels: [16, 32],
            hidden: 64,
            activation: Activation::Relu,
            n_ops: 2,
            magnitude: 10,
            cutout: 0.0,
            seed: 0,
            data_seed: 0,
            synthetic_image_size: 8,
            synthetic_train_per_class: 254,
            synthetic_test_per_class: 100,
        }
    }
}

fn key_list() -> Vec<String> {
    match toml::Table::try_from(RunConfig::default()) {
        Ok(t) => t.keys().cloned().collect(),
        Err(_) => Vec::new(),
    }
}

impl RunConfig {
    /// Names of all accepted keys (optional paths included).
    pub fn keys() -> Vec<String> {
        let mut keys = key_list();
        for k in ["embeddings", "label_vectors", "attributes"] {
            if !keys.iter().any(|x| x == k) {
                keys.push(k.into());
            }
        }
        keys.sort();
        keys
    }

    /// `key = default` lines for help output.
    pub fn describe_defaults() -> String {
        let table = toml::Table::try_from(RunConfig::default()).unwrap_or_default();
        Self::keys()
            .into_iter()
            .map(|k| match table.get(&k) {
                Some(v) => format!("  {k} = {v}"),
                None => format!("  {k} = (unset)"),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let known = Self::keys();
        let unknown: Vec<&String> = table.keys().filter(|k| !known.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown keys: {}; valid keys: {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
                known.join(", ")
            )));
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a flat `key = value` file, then applies `overrides` (`key=value`).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            let key = key.trim().replace('-', "_");
            table.insert(key, parse_value(raw.trim()));
        }
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.mu < 1 {
            problems.push("mu must be at least 1".to_string());
        }
        if self.batch_size < 1 {
            problems.push("batch_size must be at least 1".into());
        }
        if self.epochs < 1 || self.steps_per_epoch < 1 {
            problems.push("epochs and steps_per_epoch must be at least 1".into());
        }
        if self.warmup_epochs > self.epochs {
            problems.push("warmup_epochs exceeds epochs".into());
        }
        for (name, v) in [("tau_e", self.tau_e), ("tau_o", self.tau_o)] {
            if !(v > 0.0 && v <= 1.0) {
                problems.push(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        if !(0.0..=2.0).contains(&self.eps) {
            problems.push(format!("eps must be in [0, 2], got {}", self.eps));
        }
        if !(self.temp > 0.0) {
            problems.push("temp must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            problems.push("ema_decay must be in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.cutout) {
            problems.push("cutout must be in [0, 1)".into());
        }
        if self.emb_dim == 0 || self.hidden == 0 {
            problems.push("emb_dim and hidden must be positive".into());
        }
        if self.magnitude > crate::augment::MAX_MAGNITUDE {
            problems.push("magnitude must be at most 10".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_epochs * self.steps_per_epoch) as u64
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_u: self.lambda_u,
            lambda_co: self.lambda_co,
            sc_scale: self.sc_scale,
        }
    }

    pub fn pseudo_label(&self) -> PseudoLabelConfig {
        PseudoLabelConfig {
            temp: self.temp,
            tau_e: self.tau_e,
            tau_o: self.tau_o,
        }
    }

    pub fn strong_policy(&self) -> AugmentPolicy {
        let mut p = AugmentPolicy::strong(self.n_ops, self.magnitude);
        p.cutout = (self.cutout > 0.0).then_some(self.cutout);
        p
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical: BTreeMap<String, serde_json::Value> =
            serde_json::from_value(serde_json::to_value(self).expect("config serializes"))
                .expect("config is an object");
        let bytes = serde_json::to_vec(&canonical).expect("map serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
