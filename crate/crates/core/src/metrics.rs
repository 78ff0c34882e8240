//! Evaluation metrics: macro precision/recall/F1, multiclass MCC, confusion
//! matrix, calibration bins, and lift-curve data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are actual classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_labels(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::DimensionMismatch {
                expected: y_true.len(),
                got: y_pred.len(),
            });
        }
        let mut counts = vec![vec![0u64; n_classes]; n_classes];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::InvalidParam(format!(
                    "label {} out of range for {n_classes} classes",
                    t.max(p)
                )));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-class actual counts.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Per-class predicted counts.
    pub fn col_sums(&self) -> Vec<u64> {
        let c = self.counts.len();
        (0..c).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Macro-averaged scores plus the multiclass Matthews correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Macro precision/recall/F1 with the zero convention for empty denominators,
/// and MCC in its covariance-form multiclass generalization.
pub fn classification_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    n_classes: usize,
) -> Result<ClassificationMetrics> {
    let confusion = ConfusionMatrix::from_labels(y_true, y_pred, n_classes)?;
    Ok(metrics_from_confusion(confusion))
}

pub fn metrics_from_confusion(confusion: ConfusionMatrix) -> ClassificationMetrics {
    let c = confusion.counts.len();
    let actual = confusion.row_sums();
    let predicted = confusion.col_sums();
    let total = confusion.total() as f64;

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut correct = 0u64;
    for k in 0..c {
        let tp = confusion.counts[k][k];
        correct += tp;
        let p = if predicted[k] > 0 {
            tp as f64 / predicted[k] as f64
        } else {
            0.0
        };
        let r = if actual[k] > 0 {
            tp as f64 / actual[k] as f64
        } else {
            0.0
        };
        precision_sum += p;
        recall_sum += r;
        f1_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }

    // Covariance form: (c*s - sum(p_k t_k)) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2)).
    let s = total;
    let cxs = correct as f64 * s;
    let dot: f64 = actual
        .iter()
        .zip(&predicted)
        .map(|(&t, &p)| t as f64 * p as f64)
        .sum();
    let sum_p2: f64 = predicted.iter().map(|&p| (p as f64) * (p as f64)).sum();
    let sum_t2: f64 = actual.iter().map(|&t| (t as f64) * (t as f64)).sum();
    let denom = ((s * s - sum_p2) * (s * s - sum_t2)).sqrt();
    let mcc = if denom > 0.0 { (cxs - dot) / denom } else { 0.0 };

    ClassificationMetrics {
        precision: precision_sum / c as f64,
        recall: recall_sum / c as f64,
        f1: f1_sum / c as f64,
        mcc,
        accuracy: correct as f64 / total,
        confusion,
    }
}

/// One equal-width calibration bin on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub mean_score: f64,
    pub fraction_positive: f64,
    pub count: usize,
}

/// Bin scores into `n_bins` equal-width bins and report the positive fraction
/// per bin. Empty bins come back with count 0.
pub fn calibration_bins(
    y_true: &[bool],
    scores: &[f64],
    n_bins: usize,
) -> Result<Vec<CalibrationBin>> {
    if y_true.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: scores.len(),
        });
    }
    if n_bins == 0 {
        return Err(Error::InvalidParam("n_bins must be >= 1".into()));
    }
    let mut sums = vec![0.0; n_bins];
    let mut positives = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&y, &s) in y_true.iter().zip(scores) {
        let idx = ((s * n_bins as f64) as usize).min(n_bins - 1);
        sums[idx] += s;
        positives[idx] += usize::from(y);
        counts[idx] += 1;
    }
    Ok((0..n_bins)
        .map(|b| CalibrationBin {
            mean_score: if counts[b] > 0 { sums[b] / counts[b] as f64 } else { 0.0 },
            fraction_positive: if counts[b] > 0 {
                positives[b] as f64 / counts[b] as f64
            } else {
                0.0
            },
            count: counts[b],
        })
        .collect())
}

/// One lift-curve point: select rows with score >= cutoff and compare the
/// positive rate among them to the base rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftPoint {
    pub cutoff: f64,
    pub selected_fraction: f64,
    pub captured_fraction: f64,
    pub lift: f64,
}

pub fn lift_curve(y_true: &[bool], scores: &[f64], cutoffs: &[f64]) -> Result<Vec<LiftPoint>> {
    if y_true.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: scores.len(),
        });
    }
    let n = y_true.len();
    let total_pos = y_true.iter().filter(|&&y| y).count();
    if n == 0 || total_pos == 0 {
        return Err(Error::InvalidParam(
            "lift needs at least one positive instance".into(),
        ));
    }
    let base_rate = total_pos as f64 / n as f64;
    Ok(cutoffs
        .iter()
        .map(|&cutoff| {
            let mut selected = 0usize;
            let mut pos = 0usize;
            for (&y, &s) in y_true.iter().zip(scores) {
                if s >= cutoff {
                    selected += 1;
                    pos += usize::from(y);
                }
            }
            let precision = if selected > 0 {
                pos as f64 / selected as f64
            } else {
                0.0
            };
            LiftPoint {
                cutoff,
                selected_fraction: selected as f64 / n as f64,
                captured_fraction: pos as f64 / total_pos as f64,
                lift: precision / base_rate,
            }
        })
        .collect())
}
