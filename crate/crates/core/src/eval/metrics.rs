use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class and averaged classification scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    /// `confusion[true][pred]`
    pub confusion: Vec<Vec<u64>>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall and F1 from the confusion matrix; every empty
/// denominator yields 0 and every class enters the macro mean.
pub fn compute_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    num_classes: usize,
) -> Result<MetricsRecord> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension {
            op: "compute_metrics",
            lhs: vec![y_true.len()],
            rhs: vec![y_pred.len()],
        });
    }
    if y_true.is_empty() {
        return Err(Error::Data("metrics need at least one prediction".into()));
    }
    let k = num_classes;
    let mut confusion = vec![vec![0u64; k]; k];
    for (row, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= k || p >= k {
            return Err(Error::Label {
                row,
                label: t.max(p),
                classes: k,
            });
        }
        confusion[t][p] += 1;
    }
    let support: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<u64> = (0..k)
        .map(|c| confusion.iter().map(|r| r[c]).sum())
        .collect();
    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let p = ratio(tp, predicted[c] as f64);
        let r = ratio(tp, support[c] as f64);
        precision.push(p);
        recall.push(r);
        f1.push(ratio(2.0 * p * r, p + r));
    }
    let n = y_true.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
    let weighted = |v: &[f64]| {
        v.iter()
            .zip(&support)
            .map(|(x, &s)| x * s as f64)
            .sum::<f64>()
            / n
    };
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
    Ok(MetricsRecord {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        weighted_precision: weighted(&precision),
        weighted_recall: weighted(&recall),
        weighted_f1: weighted(&f1),
        accuracy: correct as f64 / n,
        precision,
        recall,
        f1,
        support,
        confusion,
    })
}
