//! Semi-supervised training loop: splits, batch assembly, schedule,
//! optimization, EMA, evaluation and pseudo-labeling statistics.

mod config;
mod data;
mod stats;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::RunConfig;
pub use data::{
    load_cifar, load_dataset, load_image_dir, make_splits, parse_cifar_records, synthetic_dataset,
    synthetic_label_matrix, CifarKind, Dataset, Sample, Split, SyntheticSpec, CIFAR100_CLASSES, CIFAR10_CLASSES,
    SYNTHETIC_CLASSES,
};
pub use stats::{
    parse_metrics, ClassStats, LossMean, MetricsRecord, MetricsRow, MetricsWriter, PseudoLabelStats, METRICS_HEADER,
};

use crate::augment::{stream_rng, weak_augment};
use crate::error::{Error, Result};
use crate::grouping::{group_labels, LabelGrouping};
use crate::labelsem::{build_label_matrix, pca_reduce, read_attributes, EmbeddingMatrix, LabelMatrix};
use crate::losses::{LossBreakdown, SemcoObjective, UnlabeledOutcome};
use crate::matrix::{argmax, Matrix};
use crate::model::{ImageTensor, ModelConfig, ModelState};

const STREAM_LABELED_VIEW: u64 = 0;
const STREAM_WEAK_VIEW: u64 = 1;
const STREAM_STRONG_VIEW: u64 = 2;
const STREAM_LABELED_DRAW: u64 = 3;
const STREAM_UNLABELED_ORDER: u64 = 4;
const BATCH_SAMPLE_ID: u64 = u64::MAX;
const EVAL_CHUNK: usize = 256;

/// Linear warmup to `lr_max`, then `lr_max·cos(π/2·progress)` reaching 0 at
/// the last step.
pub fn lr_schedule(step: u64, cfg: &RunConfig) -> f64 {
    let warmup = cfg.warmup_steps();
    let total = cfg.total_steps();
    if step < warmup {
        return cfg.lr_max * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    (cfg.lr_max * (std::f64::consts::FRAC_PI_2 * progress).cos()).max(0.0)
}

/// Fixed label semantics of a run.
pub struct StepContext<'a> {
    pub m: &'a LabelMatrix,
    pub grouping: &'a LabelGrouping,
    pub cfg: &'a RunConfig,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub breakdown: LossBreakdown,
    pub outcomes: Vec<UnlabeledOutcome>,
    pub lr: f64,
}

/// One optimizer step on a labeled batch and an unlabeled batch.
///
/// Pseudo-labels come from weak views under the live parameters; losses are
/// taken on the labeled weak views and the unlabeled strong views. Views are
/// seeded per (sample, step), so the step is reproducible.
pub fn train_step(model: &mut ModelState, ctx: &StepContext, labeled: &[&Sample], unlabeled: &[&Sample]) -> Result<StepOutput> {
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("empty labeled batch".into()));
    }
    let cfg = ctx.cfg;
    let step = model.step();
    let view = |s: &Sample, stream: u64| {
        let mut rng = stream_rng(cfg.seed, s.image.id, step, stream);
        match stream {
            STREAM_STRONG_VIEW => cfg.strong_policy().apply(&s.image, &mut rng),
            _ => weak_augment(&s.image, &mut rng),
        }
    };

    let outcomes = if unlabeled.is_empty() {
        Vec::new()
    } else {
        let weak: Vec<ImageTensor> = unlabeled.iter().map(|s| view(s, STREAM_WEAK_VIEW)).collect();
        let (q, logits) = model.forward(&weak, false)?;
        let pl = cfg.pseudo_label();
        (0..weak.len())
            .map(|i| UnlabeledOutcome::new(q.row(i), logits.row(i), ctx.m, ctx.grouping, &pl))
            .collect::<Result<Vec<_>>>()?
    };

    let mut batch: Vec<ImageTensor> = labeled.iter().map(|s| view(s, STREAM_LABELED_VIEW)).collect();
    batch.extend(unlabeled.iter().map(|s| view(s, STREAM_STRONG_VIEW)));
    let labels: Vec<usize> = labeled.iter().map(|s| s.label).collect();
    let objective = SemcoObjective {
        m: ctx.m,
        labels: &labels,
        outcomes: &outcomes,
        weights: cfg.loss_weights(),
    };
    let mut breakdown = None;
    let (_, grads) = model
        .gradients(&batch, |emb, logits| {
            let v = objective.evaluate(emb, logits)?;
            breakdown = Some(v.breakdown);
            Ok((v.breakdown.total, v.d_emb, v.d_logits))
        })
        .map_err(|e| diagnose(e, step, breakdown.as_ref()))?;
    let breakdown = breakdown.expect("loss closure ran");
    let lr = lr_schedule(step, cfg);
    model
        .sgd_step(&grads, lr, cfg.momentum, cfg.weight_decay)
        .map_err(|e| diagnose(e, step, Some(&breakdown)))?;
    model.ema_update(cfg.ema_decay)?;
    Ok(StepOutput { breakdown, outcomes, lr })
}

fn diagnose(e: Error, step: u64, b: Option<&LossBreakdown>) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(match b {
            Some(b) => format!(
                "{msg} at step {step} (sc_s {} sc_u {} oh_s {} oh_u {} co {})",
                b.l_sc_s, b.l_sc_u, b.l_oh_s, b.l_oh_u, b.l_co
            ),
            None => format!("{msg} at step {step}"),
        }),
        other => other,
    }
}

/// Error rate of the one-hot head's argmax under the EMA parameters.
pub fn evaluate(model: &ModelState, test: &[Sample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let mut wrong = 0usize;
    for chunk in test.chunks(EVAL_CHUNK) {
        let images: Vec<ImageTensor> = chunk.iter().map(|s| s.image.clone()).collect();
        let (_, logits) = model.forward(&images, true)?;
        wrong += chunk
            .iter()
            .enumerate()
            .filter(|(i, s)| argmax(logits.row(*i)) != s.label)
            .count();
    }
    Ok(wrong as f64 / test.len() as f64)
}

/// Label matrix for the dataset's classes from whichever source the config names.
pub fn label_matrix_for(cfg: &RunConfig, class_names: &[String]) -> Result<LabelMatrix> {
    if let Some(path) = &cfg.label_vectors {
        return LabelMatrix::read(path)?.select(class_names);
    }
    if let Some(path) = &cfg.embeddings {
        return build_label_matrix(&EmbeddingMatrix::read(path)?, class_names);
    }
    if let Some(path) = &cfg.attributes {
        let (labels, attrs) = read_attributes(path)?;
        let reduced = pca_reduce(&attrs, cfg.emb_dim.min(attrs.ncols()))?;
        let rows: Vec<Vec<f64>> = reduced.row_iter().map(|r| r.iter().copied().collect()).collect();
        return LabelMatrix::new(labels, Matrix::from_rows(&rows)?)?.select(class_names);
    }
    if cfg.dataset == "synthetic" {
        return synthetic_label_matrix(cfg.emb_dim);
    }
    Err(Error::Config(
        "one of label_vectors, embeddings or attributes is required for this dataset".into(),
    ))
}

pub fn synthetic_spec(cfg: &RunConfig) -> SyntheticSpec {
    SyntheticSpec {
        image_size: cfg.synthetic_image_size,
        train_per_class: cfg.synthetic_train_per_class,
        test_per_class: cfg.synthetic_test_per_class,
        seed: cfg.data_seed,
    }
}

/// Training state plus the fixed data and label semantics of one run.
pub struct Trainer {
    cfg: RunConfig,
    data: Dataset,
    split: Split,
    m: LabelMatrix,
    grouping: LabelGrouping,
    model: ModelState,
    unlabeled_cursor: u64,
    unlabeled_order: (u64, Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub steps: u64,
    pub epochs: usize,
    pub num_groups: usize,
    pub groups: Vec<Vec<String>>,
    pub test_errors: Vec<f64>,
    pub final_test_error: f64,
}

impl Trainer {
    pub fn from_config(cfg: RunConfig) -> Result<Self> {
        let data = load_dataset(&cfg.dataset, &synthetic_spec(&cfg))?;
        Self::new(cfg, data)
    }

    pub fn new(cfg: RunConfig, data: Dataset) -> Result<Self> {
        cfg.validate()?;
        let (h, w, c) = data.image_shape()?;
        let m = label_matrix_for(&cfg, &data.class_names)?;
        let grouping = group_labels(&m, cfg.eps)?;
        let split = make_splits(&data, cfg.n_labeled, cfg.seed)?;
        let model_cfg = ModelConfig {
            backbone: cfg.backbone,
            conv_channels: cfg.conv_channels,
            hidden: cfg.hidden,
            activation: cfg.activation,
            ..ModelConfig::new(h, w, c, m.dim(), data.num_classes())
        };
        let model = ModelState::new(model_cfg, cfg.seed)?;
        Ok(Self {
            cfg,
            data,
            split,
            m,
            grouping,
            model,
            unlabeled_cursor: 0,
            unlabeled_order: (u64::MAX, Vec::new()),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn grouping(&self) -> &LabelGrouping {
        &self.grouping
    }

    pub fn label_matrix(&self) -> &LabelMatrix {
        &self.m
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    /// Uniform draws with replacement from the labeled pool.
    fn labeled_batch(&self, step: u64) -> Vec<usize> {
        let mut rng = stream_rng(self.cfg.seed, BATCH_SAMPLE_ID, step, STREAM_LABELED_DRAW);
        let pool = &self.split.labeled;
        (0..self.cfg.batch_size).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    }

    /// Next `mu·B` unlabeled indices from a sequence of per-pass shuffles.
    fn unlabeled_batch(&mut self) -> Vec<usize> {
        let n = self.split.unlabeled.len() as u64;
        if n == 0 {
            return Vec::new();
        }
        let want = self.cfg.mu * self.cfg.batch_size;
        let mut out = Vec::with_capacity(want);
        for _ in 0..want {
            let pass = self.unlabeled_cursor / n;
            if self.unlabeled_order.0 != pass {
                let mut order = self.split.unlabeled.clone();
                order.shuffle(&mut stream_rng(self.cfg.seed, BATCH_SAMPLE_ID, pass, STREAM_UNLABELED_ORDER));
                self.unlabeled_order = (pass, order);
            }
            out.push(self.unlabeled_order.1[(self.unlabeled_cursor % n) as usize]);
            self.unlabeled_cursor += 1;
        }
        out
    }

    /// Runs one epoch and returns its statistics (test error included).
    pub fn run_epoch(&mut self, epoch: usize) -> Result<MetricsRecord> {
        let mut stats = PseudoLabelStats::new(self.data.num_classes());
        let mut losses = LossMean::default();
        let mut lr = 0.0;
        for _ in 0..self.cfg.steps_per_epoch {
            let li = self.labeled_batch(self.model.step());
            let ui = self.unlabeled_batch();
            let ctx = StepContext {
                m: &self.m,
                grouping: &self.grouping,
                cfg: &self.cfg,
            };
            let labeled: Vec<&Sample> = li.iter().map(|&i| &self.data.train[i]).collect();
            let unlabeled: Vec<&Sample> = ui.iter().map(|&i| &self.data.train[i]).collect();
            let out = train_step(&mut self.model, &ctx, &labeled, &unlabeled)?;
            let truth: Vec<usize> = unlabeled.iter().map(|s| s.label).collect();
            stats.accumulate(&out.outcomes, &truth)?;
            losses.add(&out.breakdown);
            lr = out.lr;
        }
        let test_error = if self.data.test.is_empty() {
            None
        } else {
            Some(evaluate(&self.model, &self.data.test)?)
        };
        Ok(MetricsRecord {
            step: self.model.step(),
            epoch,
            classes: stats.class_stats(),
            disagreement_rate: stats.disagreement_rate(),
            losses: losses.means(),
            lr,
            test_error,
        })
    }

    /// Trains for `cfg.epochs`, streaming each epoch's record to `metrics`.
    pub fn run<W: Write>(&mut self, metrics: &mut MetricsWriter<W>) -> Result<RunSummary> {
        let mut test_errors = Vec::new();
        for epoch in 0..self.cfg.epochs {
            let rec = self.run_epoch(epoch)?;
            metrics
                .record(&rec, &self.data.class_names)
                .map_err(|e| Error::io("metrics", e))?;
            test_errors.extend(rec.test_error);
        }
        Ok(self.summary(test_errors))
    }

    fn summary(&self, test_errors: Vec<f64>) -> RunSummary {
        RunSummary {
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            steps: self.model.step(),
            epochs: self.cfg.epochs,
            num_groups: self.grouping.num_groups(),
            groups: self
                .grouping
                .members()
                .into_iter()
                .map(|g| g.into_iter().map(|c| self.data.class_names[c].clone()).collect())
                .collect(),
            final_test_error: test_errors.last().copied().unwrap_or(f64::NAN),
            test_errors,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config_hash: self.cfg.hash(),
            config: self.cfg.clone(),
            class_names: self.data.class_names.clone(),
            model: self.model.clone(),
        }
    }

    /// Trains and writes `metrics.csv`, `summary.json` and `checkpoint.json`
    /// into `out_dir`.
    pub fn run_to_dir(&mut self, out_dir: &Path) -> Result<RunSummary> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join("metrics.csv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut writer = MetricsWriter::new(BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
        let summary = self.run(&mut writer)?;
        write_json(&out_dir.join("summary.json"), &summary)?;
        self.checkpoint().write(&out_dir.join("checkpoint.json"))?;
        Ok(summary)
    }
}

pub const CHECKPOINT_FORMAT: &str = "semco-checkpoint-v1";

/// Config, class names and model state (live, EMA and momentum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub class_names: Vec<String>,
    pub model: ModelState,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("{}: unknown checkpoint format `{}`", path.display(), ck.format)));
        }
        if ck.config.hash() != ck.config_hash {
            return Err(Error::Data(format!("{}: config hash mismatch", path.display())));
        }
        ck.model = ck.model.restore()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> RunConfig {
        RunConfig {
            n_labeled: 16,
            mu: 2,
            batch_size: 4,
            epochs: 2,
            steps_per_epoch: 3,
            warmup_epochs: 1,
            emb_dim: 8,
            conv_channels: [4, 4],
            hidden: 8,
            synthetic_train_per_class: 6,
            synthetic_test_per_class: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn schedule_shape() {
        let cfg = RunConfig { epochs: 10, steps_per_epoch: 10, warmup_epochs: 2, ..RunConfig::default() };
        assert_eq!(lr_schedule(0, &cfg), 0.0);
        assert!((lr_schedule(10, &cfg) - 0.015).abs() < 1e-15);
        assert_eq!(lr_schedule(20, &cfg), 0.03);
        assert!(lr_schedule(99, &cfg) <= 1e-4 * 0.03);
        let mut prev = f64::INFINITY;
        for s in 20..100 {
            let lr = lr_schedule(s, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn evaluation_has_no_side_effects() {
        let t = Trainer::from_config(tiny_config()).unwrap();
        let before = t.model().clone();
        let a = evaluate(t.model(), &t.dataset().test).unwrap();
        assert_eq!(a, evaluate(t.model(), &t.dataset().test).unwrap());
        assert_eq!(&before, t.model());
        assert!(evaluate(t.model(), &[]).is_err());
    }

    #[test]
    fn supervised_only_total() {
        let mut cfg = tiny_config();
        cfg.lambda_u = 0.0;
        cfg.lambda_co = 0.0;
        cfg.n_labeled = 48;
        let mut t = Trainer::from_config(cfg).unwrap();
        assert!(t.split().unlabeled.is_empty());
        let rec = t.run_epoch(0).unwrap();
        let get = |n: &str| rec.losses.iter().find(|(k, _)| *k == n).unwrap().1;
        assert_eq!(get("loss_sc_u"), 0.0);
        assert!((get("loss_total") - (3.0 * get("loss_sc_s") + get("loss_oh_s"))).abs() < 1e-12);
        assert!(rec.classes.iter().all(|c| c.ratio_sc.is_none()));
    }

    #[test]
    fn batches_have_requested_sizes() {
        let mut t = Trainer::from_config(tiny_config()).unwrap();
        assert_eq!(t.labeled_batch(0).len(), 4);
        let n = t.split().unlabeled.len();
        let mut seen = Vec::new();
        while seen.len() < n {
            seen.extend(t.unlabeled_batch());
        }
        seen.truncate(n);
        seen.sort_unstable();
        assert_eq!(seen, t.split().unlabeled);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::from_config(tiny_config()).unwrap();
        let summary = t.run_to_dir(dir.path()).unwrap();
        assert_eq!(summary.steps, 6);
        assert_eq!(summary.test_errors.len(), 2);
        let ck = Checkpoint::read(&dir.path().join("checkpoint.json")).unwrap();
        assert_eq!(&ck.model, t.model());
        assert_eq!(evaluate(&ck.model, &t.dataset().test).unwrap(), summary.final_test_error);
    }
}
