use std::io::Write;

use crate::error::{EngineError, Result};
use crate::network::argmax_rows;
use crate::tensor::Matrix;

/// Confusion-matrix statistics. `confusion[t][p]` counts points of true
/// class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub iou: Vec<f64>,
    pub miou: f64,
    pub confusion: Vec<Vec<u64>>,
}

pub fn evaluate(logits: &Matrix, labels: &[usize]) -> Result<Metrics> {
    evaluate_predictions(&argmax_rows(logits), labels, logits.cols())
}

/// Per-class IoU is `TP / (TP + FP + FN)`; classes absent from `labels` are
/// left out of the mean.
pub fn evaluate_predictions(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(EngineError::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(EngineError::empty("nothing to evaluate"));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= classes || t >= classes {
            return Err(EngineError::index(format!("class {} out of range for {classes}", p.max(t))));
        }
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let mut iou = vec![0.0; classes];
    let mut present = Vec::new();
    for c in 0..classes {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = (0..classes).map(|t| confusion[t][c]).sum();
        let union = support + predicted - tp;
        if union > 0 {
            iou[c] = tp as f64 / union as f64;
        }
        if support > 0 {
            present.push(iou[c]);
        }
    }
    Ok(Metrics {
        accuracy: correct as f64 / labels.len() as f64,
        miou: present.iter().sum::<f64>() / present.len() as f64,
        iou,
        confusion,
    })
}

/// CSV with header `metric,value`: `accuracy`, `miou`, then `iou_<c>` per
/// class.
pub fn write_metrics_csv<W: Write>(mut out: W, m: &Metrics) -> Result<()> {
    writeln!(out, "metric,value")?;
    writeln!(out, "accuracy,{}", m.accuracy)?;
    writeln!(out, "miou,{}", m.miou)?;
    for (c, v) in m.iou.iter().enumerate() {
        writeln!(out, "iou_{c},{v}")?;
    }
    Ok(())
}
