use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, UnlabeledOutcome};

/// Per-class pseudo-labeling counts over the unlabeled samples seen so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabelStats {
    seen: Vec<u64>,
    sc_kept: Vec<u64>,
    sc_correct: Vec<u64>,
    oh_kept: Vec<u64>,
    oh_correct: Vec<u64>,
    co_confident: u64,
    co_conflicting: u64,
}

/// Rates for one class; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassStats {
    pub ratio_sc: Option<f64>,
    pub accuracy_sc: Option<f64>,
    pub ratio_oh: Option<f64>,
    pub accuracy_oh: Option<f64>,
}

fn rate(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl PseudoLabelStats {
    pub fn new(num_classes: usize) -> Self {
        Self {
            seen: vec![0; num_classes],
            sc_kept: vec![0; num_classes],
            sc_correct: vec![0; num_classes],
            oh_kept: vec![0; num_classes],
            oh_correct: vec![0; num_classes],
            co_confident: 0,
            co_conflicting: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.seen.len()
    }

    /// The semantic head's label is `argmax p`; the one-hot head's is its
    /// hard pseudo-label.
    pub fn accumulate(&mut self, outcomes: &[UnlabeledOutcome], true_labels: &[usize]) -> Result<()> {
        if outcomes.len() != true_labels.len() {
            return Err(Error::Shape(format!(
                "{} outcomes for {} labels",
                outcomes.len(),
                true_labels.len()
            )));
        }
        if let Some(&bad) = true_labels.iter().find(|&&c| c >= self.num_classes()) {
            return Err(Error::InvalidArgument(format!("true label {bad} out of range")));
        }
        for (o, &c) in outcomes.iter().zip(true_labels) {
            self.seen[c] += 1;
            if o.eta_sc {
                self.sc_kept[c] += 1;
                self.sc_correct[c] += u64::from(o.semantic_class == c);
            }
            if o.eta_oh {
                self.oh_kept[c] += 1;
                self.oh_correct[c] += u64::from(o.pseudo_class == Some(c));
            }
            if o.eta_sc && o.eta_oh {
                self.co_confident += 1;
                self.co_conflicting += u64::from(o.disagrees());
            }
        }
        Ok(())
    }

    pub fn class_stats(&self) -> Vec<ClassStats> {
        (0..self.num_classes())
            .map(|c| ClassStats {
                ratio_sc: rate(self.sc_kept[c], self.seen[c]),
                accuracy_sc: rate(self.sc_correct[c], self.sc_kept[c]),
                ratio_oh: rate(self.oh_kept[c], self.seen[c]),
                accuracy_oh: rate(self.oh_correct[c], self.oh_kept[c]),
            })
            .collect()
    }

    pub fn disagreement_rate(&self) -> Option<f64> {
        rate(self.co_conflicting, self.co_confident)
    }

    pub fn seen(&self, class: usize) -> u64 {
        self.seen[class]
    }
}

/// Running mean of loss breakdowns.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossMean {
    sums: [f64; 6],
    count: u64,
}

impl LossMean {
    pub fn add(&mut self, b: &LossBreakdown) {
        for (s, v) in self.sums.iter_mut().zip([b.l_sc_s, b.l_sc_u, b.l_oh_s, b.l_oh_u, b.l_co, b.total]) {
            *s += v;
        }
        self.count += 1;
    }

    /// `(name, mean)` pairs; empty before the first `add`.
    pub fn means(&self) -> Vec<(&'static str, f64)> {
        if self.count == 0 {
            return Vec::new();
        }
        let n = self.count as f64;
        ["loss_sc_s", "loss_sc_u", "loss_oh_s", "loss_oh_u", "loss_co", "loss_total"]
            .into_iter()
            .zip(self.sums.iter().map(|s| s / n))
            .collect()
    }
}

/// Everything emitted at the end of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub classes: Vec<ClassStats>,
    pub disagreement_rate: Option<f64>,
    pub losses: Vec<(&'static str, f64)>,
    pub lr: f64,
    pub test_error: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,epoch,split,metric,class,value";

/// Long-format CSV writer; absent values are written as empty fields.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out })
    }

    pub fn row(&mut self, step: u64, epoch: usize, split: &str, metric: &str, class: &str, value: Option<f64>) -> std::io::Result<()> {
        match value {
            Some(v) => writeln!(self.out, "{step},{epoch},{split},{metric},{class},{v}"),
            None => writeln!(self.out, "{step},{epoch},{split},{metric},{class},"),
        }
    }

    pub fn record(&mut self, r: &MetricsRecord, class_names: &[String]) -> std::io::Result<()> {
        let (s, e) = (r.step, r.epoch);
        for &(name, v) in &r.losses {
            self.row(s, e, "train", name, "", Some(v))?;
        }
        self.row(s, e, "train", "lr", "", Some(r.lr))?;
        for (name, cs) in class_names.iter().zip(&r.classes) {
            self.row(s, e, "unlabeled", "pl_ratio_sc", name, cs.ratio_sc)?;
            self.row(s, e, "unlabeled", "pl_accuracy_sc", name, cs.accuracy_sc)?;
            self.row(s, e, "unlabeled", "pl_ratio_oh", name, cs.ratio_oh)?;
            self.row(s, e, "unlabeled", "pl_accuracy_oh", name, cs.accuracy_oh)?;
        }
        self.row(s, e, "unlabeled", "disagreement_rate", "", r.disagreement_rate)?;
        if let Some(err) = r.test_error {
            self.row(s, e, "test", "error", "", Some(err))?;
        }
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// One parsed metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub class: String,
    pub value: Option<f64>,
}

pub fn parse_metrics(text: &str, path: &std::path::Path) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || (i == 0 && line.trim() == METRICS_HEADER) {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::parse(path, lineno, format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| Error::parse(path, lineno, e.to_string()));
        let value = match f[5] {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|e| Error::parse(path, lineno, e.to_string()))?),
        };
        rows.push(MetricsRow {
            step: num(f[0])?,
            epoch: num(f[1])? as usize,
            split: f[2].into(),
            metric: f[3].into(),
            class: f[4].into(),
            value,
        });
    }
    Ok(rows)
}
