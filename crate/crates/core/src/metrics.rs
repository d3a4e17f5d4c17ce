//! Evaluation metrics: accuracy, binary F1, and chord symbol recall on a
//! uniform tatum grid (which reduces to tatum-level accuracy).

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    F1,
    Csr,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricKind::Accuracy => write!(f, "accuracy"),
            MetricKind::F1 => write!(f, "f1"),
            MetricKind::Csr => write!(f, "csr"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub metric: MetricKind,
    pub value: f64,
    pub support: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<(u32, f64)>>,
}

fn check_lengths(pred: usize, gt: usize) -> Result<()> {
    if pred != gt {
        return Err(CoreError::Metric(format!(
            "length mismatch: {pred} predictions vs {gt} labels"
        )));
    }
    if pred == 0 {
        return Err(CoreError::Metric("empty label sequences".into()));
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(pred: &[u32], gt: &[u32]) -> Result<f64> {
    check_lengths(pred.len(), gt.len())?;
    let hits = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// F1 for the positive class (label 1). When no positives are predicted
/// and none exist, returns 0 by convention and warns.
pub fn f1_binary(pred: &[u32], gt: &[u32]) -> Result<f64> {
    check_lengths(pred.len(), gt.len())?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        match (p == 1, g == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if 2 * tp + fp + fn_ == 0 {
        log::warn!("f1: no predicted and no actual positives; returning 0");
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Chord symbol recall over a uniform tatum grid: the fraction of tatums
/// whose predicted label matches ground truth.
pub fn csr(pred_tatums: &[u32], gt_tatums: &[u32]) -> Result<f64> {
    accuracy(pred_tatums, gt_tatums)
}

/// Micro-averaged accuracy across concatenated supports.
pub fn pooled_accuracy(pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<f64> {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (p, g) in pairs {
        pred.extend_from_slice(p);
        gt.extend_from_slice(g);
    }
    accuracy(&pred, &gt)
}
