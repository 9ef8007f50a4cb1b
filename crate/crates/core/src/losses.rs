//! Scoring, masking, pseudo-labeling and the loss terms of both heads.
//!
//! Every batch loss comes in two forms: a plain value and a `*_grad` variant
//! that also returns the gradient with respect to the head outputs it reads,
//! which [`crate::model::ModelState::gradients`] back-propagates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{group_scores, LabelGrouping};
use crate::labelsem::LabelMatrix;
use crate::matrix::{argmax, dot, norm, softmax, Matrix};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_TAU_E: f64 = 0.70;
pub const DEFAULT_TAU_O: f64 = 0.95;

/// `1 - cos(z, z_hat)`.
pub fn cosine_loss(z: &[f64], z_hat: &[f64]) -> Result<f64> {
    cosine_loss_grad(z, z_hat).map(|(v, _)| v)
}

/// Cosine loss and its gradient with respect to `pred`.
pub fn cosine_loss_grad(target: &[f64], pred: &[f64]) -> Result<(f64, Vec<f64>)> {
    if target.len() != pred.len() {
        return Err(Error::Shape(format!(
            "cosine loss between {} and {} dimensions",
            target.len(),
            pred.len()
        )));
    }
    let (nt, np) = (norm(target), norm(pred));
    if nt == 0.0 {
        return Err(Error::ZeroVector("cosine loss target".into()));
    }
    if np == 0.0 {
        return Err(Error::ZeroVector("cosine loss prediction".into()));
    }
    let cos = dot(target, pred) / (nt * np);
    let loss = (1.0 - cos).clamp(0.0, 2.0);
    let grad = target
        .iter()
        .zip(pred)
        .map(|(t, p)| -(t / (nt * np) - cos * p / (np * np)))
        .collect();
    Ok((loss, grad))
}

/// Cross-entropy of `softmax(logits)` against class `target`, with gradient.
pub fn cross_entropy_grad(target: usize, logits: &[f64]) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    (lse - logits[target], grad)
}

pub fn cross_entropy(target: usize, logits: &[f64]) -> f64 {
    cross_entropy_grad(target, logits).0
}

/// Softmax over `cos(q, M_k) / temp`. Rows of `m` are unit norm.
pub fn class_scores(q: &[f64], m: &LabelMatrix, temp: f64) -> Result<Vec<f64>> {
    if !(temp > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temp}")));
    }
    if q.len() != m.dim() {
        return Err(Error::Shape(format!("{}-d query for {}-d labels", q.len(), m.dim())));
    }
    let nq = norm(q);
    if nq == 0.0 {
        return Err(Error::ZeroVector("class score query".into()));
    }
    let logits: Vec<f64> = (0..m.num_classes())
        .map(|k| dot(q, m.row(k)) / nq / temp)
        .collect();
    Ok(softmax(&logits))
}

/// Semantic-head mask: 1 iff the largest group score reaches `tau_e`.
pub fn semantic_mask(g: &[f64], tau_e: f64) -> bool {
    g.iter().any(|&s| s >= tau_e)
}

/// One-hot-head mask: 1 iff the largest class probability reaches `tau_o`.
pub fn onehot_mask(p: &[f64], tau_o: f64) -> bool {
    p.iter().any(|&s| s >= tau_o)
}

/// Score-weighted mean of the winning group's label embeddings.
pub fn pseudo_embedding(p: &[f64], grouping: &LabelGrouping, m: &LabelMatrix) -> Result<Vec<f64>> {
    if m.num_classes() != grouping.num_classes() {
        return Err(Error::Shape(format!(
            "{} label rows for {} grouped classes",
            m.num_classes(),
            grouping.num_classes()
        )));
    }
    let g = group_scores(p, grouping)?;
    let winner = argmax(&g);
    let total = g[winner];
    if !(total > 0.0) {
        return Err(Error::ZeroVector("winning group has zero total score".into()));
    }
    let mut out = vec![0.0; m.dim()];
    for k in (0..p.len()).filter(|&k| grouping.group_of(k) == winner) {
        let w = p[k] / total;
        out.iter_mut().zip(m.row(k)).for_each(|(o, x)| *o += w * x);
    }
    Ok(out)
}

/// Pseudo-labeling thresholds and score temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    pub temp: f64,
    pub tau_e: f64,
    pub tau_o: f64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            temp: DEFAULT_TEMPERATURE,
            tau_e: DEFAULT_TAU_E,
            tau_o: DEFAULT_TAU_O,
        }
    }
}

/// What both heads concluded about one weakly augmented unlabeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledOutcome {
    /// Semantic-head class scores.
    pub p: Vec<f64>,
    /// Group scores `Gᵀp`.
    pub g: Vec<f64>,
    pub eta_sc: bool,
    pub eta_oh: bool,
    /// Present iff `eta_sc`.
    pub pseudo_emb: Option<Vec<f64>>,
    /// One-hot-head hard pseudo-label, present iff `eta_oh`.
    pub pseudo_class: Option<usize>,
    /// `argmax p`, the semantic head's hard label.
    pub semantic_class: usize,
}

impl UnlabeledOutcome {
    pub fn new(
        q_weak: &[f64],
        logits_weak: &[f64],
        m: &LabelMatrix,
        grouping: &LabelGrouping,
        cfg: &PseudoLabelConfig,
    ) -> Result<Self> {
        let p = class_scores(q_weak, m, cfg.temp)?;
        let g = group_scores(&p, grouping)?;
        let eta_sc = semantic_mask(&g, cfg.tau_e);
        let pseudo_emb = if eta_sc {
            Some(pseudo_embedding(&p, grouping, m)?)
        } else {
            None
        };
        let probs = softmax(logits_weak);
        let eta_oh = onehot_mask(&probs, cfg.tau_o);
        let semantic_class = argmax(&p);
        Ok(Self {
            p,
            g,
            eta_sc,
            eta_oh,
            pseudo_emb,
            pseudo_class: eta_oh.then(|| argmax(&probs)),
            semantic_class,
        })
    }

    /// Both heads are confident and name different classes.
    pub fn disagrees(&self) -> bool {
        self.eta_sc && self.eta_oh && self.pseudo_class != Some(self.semantic_class)
    }
}

/// A loss value and its gradient with respect to one head's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Matrix,
}

fn check_rows(what: &str, expected: usize, m: &Matrix) -> Result<()> {
    if m.rows() != expected {
        return Err(Error::Shape(format!(
            "{what}: {} prediction rows for {expected} samples",
            m.rows()
        )));
    }
    Ok(())
}

/// Mean cosine loss between each sample's label embedding and its prediction.
pub fn semantic_sup_loss_grad(m: &LabelMatrix, labels: &[usize], emb_preds: &Matrix) -> Result<LossValue> {
    check_rows("semantic supervised loss", labels.len(), emb_preds)?;
    let n = labels.len();
    let mut grad = Matrix::zeros(n, emb_preds.cols());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (l, g) = cosine_loss_grad(m.row(y), emb_preds.row(i))?;
        total += l;
        grad.row_mut(i).iter_mut().zip(g).for_each(|(o, x)| *o = x / n as f64);
    }
    Ok(LossValue {
        value: if n == 0 { 0.0 } else { total / n as f64 },
        grad,
    })
}

pub fn semantic_sup_loss(m: &LabelMatrix, labels: &[usize], emb_preds: &Matrix) -> Result<f64> {
    semantic_sup_loss_grad(m, labels, emb_preds).map(|l| l.value)
}

/// Masked cosine loss against the pseudo-label embeddings, averaged over all
/// unlabeled samples.
pub fn semantic_unsup_loss_grad(outcomes: &[UnlabeledOutcome], emb_preds_strong: &Matrix) -> Result<LossValue> {
    check_rows("semantic unsupervised loss", outcomes.len(), emb_preds_strong)?;
    let n = outcomes.len() as f64;
    let mut grad = Matrix::zeros(outcomes.len(), emb_preds_strong.cols());
    let mut total = 0.0;
    for (j, o) in outcomes.iter().enumerate() {
        if let (true, Some(target)) = (o.eta_sc, o.pseudo_emb.as_ref()) {
            let (l, g) = cosine_loss_grad(target, emb_preds_strong.row(j))?;
            total += l;
            grad.row_mut(j).iter_mut().zip(g).for_each(|(o, x)| *o = x / n);
        }
    }
    Ok(LossValue {
        value: if outcomes.is_empty() { 0.0 } else { total / n },
        grad,
    })
}

pub fn semantic_unsup_loss(outcomes: &[UnlabeledOutcome], emb_preds_strong: &Matrix) -> Result<f64> {
    semantic_unsup_loss_grad(outcomes, emb_preds_strong).map(|l| l.value)
}

fn check_logits(logits: &Matrix) -> Result<()> {
    if logits.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

pub fn onehot_sup_loss_grad(labels: &[usize], logits: &Matrix) -> Result<LossValue> {
    check_rows("one-hot supervised loss", labels.len(), logits)?;
    check_logits(logits)?;
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(labels.len(), logits.cols());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (l, g) = cross_entropy_grad(y, logits.row(i));
        total += l;
        grad.row_mut(i).iter_mut().zip(g).for_each(|(o, x)| *o = x / n);
    }
    Ok(LossValue {
        value: if labels.is_empty() { 0.0 } else { total / n },
        grad,
    })
}

pub fn onehot_sup_loss(labels: &[usize], logits: &Matrix) -> Result<f64> {
    onehot_sup_loss_grad(labels, logits).map(|l| l.value)
}

pub fn onehot_unsup_loss_grad(outcomes: &[UnlabeledOutcome], logits_strong: &Matrix) -> Result<LossValue> {
    check_rows("one-hot unsupervised loss", outcomes.len(), logits_strong)?;
    check_logits(logits_strong)?;
    let n = outcomes.len() as f64;
    let mut grad = Matrix::zeros(outcomes.len(), logits_strong.cols());
    let mut total = 0.0;
    for (j, o) in outcomes.iter().enumerate() {
        if let (true, Some(y)) = (o.eta_oh, o.pseudo_class) {
            let (l, g) = cross_entropy_grad(y, logits_strong.row(j));
            total += l;
            grad.row_mut(j).iter_mut().zip(g).for_each(|(o, x)| *o = x / n);
        }
    }
    Ok(LossValue {
        value: if outcomes.is_empty() { 0.0 } else { total / n },
        grad,
    })
}

pub fn onehot_unsup_loss(outcomes: &[UnlabeledOutcome], logits_strong: &Matrix) -> Result<f64> {
    onehot_unsup_loss_grad(outcomes, logits_strong).map(|l| l.value)
}

/// The two halves of the co-training loss: the semantic head learning from
/// the one-hot head's pseudo-labels and vice versa.
#[derive(Debug, Clone, PartialEq)]
pub struct CoTrainLoss {
    pub semantic: LossValue,
    pub onehot: LossValue,
}

impl CoTrainLoss {
    pub fn value(&self) -> f64 {
        self.semantic.value + self.onehot.value
    }
}

pub fn cotrain_loss_grad(
    outcomes: &[UnlabeledOutcome],
    m: &LabelMatrix,
    emb_preds_strong: &Matrix,
    logits_strong: &Matrix,
) -> Result<CoTrainLoss> {
    check_rows("co-training loss", outcomes.len(), emb_preds_strong)?;
    check_rows("co-training loss", outcomes.len(), logits_strong)?;
    check_logits(logits_strong)?;
    let n = outcomes.len() as f64;
    let mut g_emb = Matrix::zeros(outcomes.len(), emb_preds_strong.cols());
    let mut g_logits = Matrix::zeros(outcomes.len(), logits_strong.cols());
    let (mut sc, mut oh) = (0.0, 0.0);
    for (j, o) in outcomes.iter().enumerate() {
        if let (true, Some(y)) = (o.eta_oh, o.pseudo_class) {
            let (l, g) = cosine_loss_grad(m.row(y), emb_preds_strong.row(j))?;
            sc += l;
            g_emb.row_mut(j).iter_mut().zip(g).for_each(|(o, x)| *o = x / n);
        }
        if o.eta_sc {
            let (l, g) = cross_entropy_grad(o.semantic_class, logits_strong.row(j));
            oh += l;
            g_logits.row_mut(j).iter_mut().zip(g).for_each(|(o, x)| *o = x / n);
        }
    }
    let norm = |v: f64| if outcomes.is_empty() { 0.0 } else { v / n };
    Ok(CoTrainLoss {
        semantic: LossValue {
            value: norm(sc),
            grad: g_emb,
        },
        onehot: LossValue {
            value: norm(oh),
            grad: g_logits,
        },
    })
}

pub fn cotrain_loss(
    outcomes: &[UnlabeledOutcome],
    m: &LabelMatrix,
    emb_preds_strong: &Matrix,
    logits_strong: &Matrix,
) -> Result<f64> {
    cotrain_loss_grad(outcomes, m, emb_preds_strong, logits_strong).map(|l| l.value())
}

/// Coefficients of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_u: f64,
    pub lambda_co: f64,
    /// Multiplier on every term whose gradient reaches the semantic head.
    pub sc_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_u: 1.0,
            lambda_co: 1.0,
            sc_scale: 3.0,
        }
    }
}

/// Unweighted loss terms. The co-training loss is kept as its semantic and
/// one-hot halves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub l_sc_s: f64,
    pub l_sc_u: f64,
    pub l_oh_s: f64,
    pub l_oh_u: f64,
    pub l_co_sc: f64,
    pub l_co_oh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sc_s: f64,
    pub l_sc_u: f64,
    pub l_oh_s: f64,
    pub l_oh_u: f64,
    pub l_co: f64,
    pub total: f64,
    pub lambda_u: f64,
    pub lambda_co: f64,
    pub sc_scale: f64,
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<LossBreakdown> {
    let parts = [c.l_sc_s, c.l_sc_u, c.l_oh_s, c.l_oh_u, c.l_co_sc, c.l_co_oh];
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss components {parts:?}")));
    }
    let total = w.sc_scale * c.l_sc_s
        + c.l_oh_s
        + w.lambda_u * (w.sc_scale * c.l_sc_u + c.l_oh_u)
        + w.lambda_co * (w.sc_scale * c.l_co_sc + c.l_co_oh);
    Ok(LossBreakdown {
        l_sc_s: c.l_sc_s,
        l_sc_u: c.l_sc_u,
        l_oh_s: c.l_oh_s,
        l_oh_u: c.l_oh_u,
        l_co: c.l_co_sc + c.l_co_oh,
        total,
        lambda_u: w.lambda_u,
        lambda_co: w.lambda_co,
        sc_scale: w.sc_scale,
    })
}

/// Total loss of one training batch whose head outputs stack the `labels.len()`
/// labeled rows above the strongly augmented unlabeled rows.
pub struct SemcoObjective<'a> {
    pub m: &'a LabelMatrix,
    pub labels: &'a [usize],
    pub outcomes: &'a [UnlabeledOutcome],
    pub weights: LossWeights,
}

/// Loss value with gradients for both heads' outputs.
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub breakdown: LossBreakdown,
    pub d_emb: Matrix,
    pub d_logits: Matrix,
}

impl SemcoObjective<'_> {
    pub fn evaluate(&self, emb: &Matrix, logits: &Matrix) -> Result<ObjectiveValue> {
        let n = self.labels.len();
        let total_rows = n + self.outcomes.len();
        check_rows("objective", total_rows, emb)?;
        check_rows("objective", total_rows, logits)?;
        let (emb_s, emb_u) = (emb.slice_rows(0, n), emb.slice_rows(n, total_rows));
        let (log_s, log_u) = (logits.slice_rows(0, n), logits.slice_rows(n, total_rows));

        let w = self.weights;
        let sc_s = semantic_sup_loss_grad(self.m, self.labels, &emb_s)?;
        let oh_s = onehot_sup_loss_grad(self.labels, &log_s)?;
        let sc_u = semantic_unsup_loss_grad(self.outcomes, &emb_u)?;
        let oh_u = onehot_unsup_loss_grad(self.outcomes, &log_u)?;
        let co = cotrain_loss_grad(self.outcomes, self.m, &emb_u, &log_u)?;

        let breakdown = total_loss(
            &LossComponents {
                l_sc_s: sc_s.value,
                l_sc_u: sc_u.value,
                l_oh_s: oh_s.value,
                l_oh_u: oh_u.value,
                l_co_sc: co.semantic.value,
                l_co_oh: co.onehot.value,
            },
            &w,
        )?;

        let mut d_emb_u = sc_u.grad;
        d_emb_u.scale(w.lambda_u);
        d_emb_u.add_scaled(&co.semantic.grad, w.lambda_co)?;
        let mut d_emb = sc_s.grad.vstack(&d_emb_u)?;
        d_emb.scale(w.sc_scale);

        let mut d_log_u = oh_u.grad;
        d_log_u.scale(w.lambda_u);
        d_log_u.add_scaled(&co.onehot.grad, w.lambda_co)?;
        let d_logits = oh_s.grad.vstack(&d_log_u)?;

        Ok(ObjectiveValue {
            breakdown,
            d_emb,
            d_logits,
        })
    }
}
