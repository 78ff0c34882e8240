//! Perturbation-based validation of feature importance: apply w-perturbations
//! one feature at a time and measure how far the predictions move.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::predictor::{top_two_gap, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    Additive,
    Multiplicative,
}

/// Which features to perturb, by how much, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub w: f64,
    pub features: Vec<usize>,
    pub mode: PerturbationMode,
}

impl PerturbationSpec {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::InvalidParam("perturbation feature list is empty".into()));
        }
        if !self.w.is_finite() || self.w == 0.0 {
            return Err(Error::InvalidParam(format!(
                "perturbation magnitude {} must be finite and non-zero",
                self.w
            )));
        }
        if let Some(&bad) = self.features.iter().find(|&&f| f >= n_features) {
            return Err(Error::InvalidParam(format!(
                "feature {bad} out of range for {n_features} features"
            )));
        }
        Ok(())
    }
}

/// Sensitivity of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEntry {
    pub feature: usize,
    pub name: String,
    /// |MSE(perturbed) - MSE(original)|.
    pub sensitivity: f64,
    /// Signed MSE difference, kept for inspection.
    pub sensitivity_signed: f64,
    /// Fraction of instances whose predicted label changed.
    pub flip_rate: f64,
    pub mean_top2_gap_before: f64,
    pub mean_top2_gap_after: f64,
}

/// Per-feature sensitivities, sorted descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub w: f64,
    pub mode: PerturbationMode,
    pub entries: Vec<SensitivityEntry>,
    /// Per feature (outer, in entry order), per instance: probability gap
    /// between the two most probable classes before and after perturbing.
    #[serde(skip)]
    pub instance_gaps: Vec<Vec<(f64, f64)>>,
}

/// Perturb exactly one coordinate: additive `x + w`, multiplicative `x * (1 + w)`.
/// Multiplicative perturbation of a zero value leaves it unchanged.
pub fn w_perturb(x: &[f64], feature: usize, w: f64, mode: PerturbationMode) -> Result<Vec<f64>> {
    if feature >= x.len() {
        return Err(Error::InvalidParam(format!(
            "feature {feature} out of range for {} features",
            x.len()
        )));
    }
    let mut out = x.to_vec();
    out[feature] = match mode {
        PerturbationMode::Additive => out[feature] + w,
        PerturbationMode::Multiplicative => out[feature] * (1.0 + w),
    };
    Ok(out)
}

// Mean over rows of the squared distance between the one-hot label and the
// predicted probability vector.
fn probability_mse(predictions: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (probs, &label) in predictions.iter().zip(labels) {
        for (c, &p) in probs.iter().enumerate() {
            let y = if c == label { 1.0 } else { 0.0 };
            total += (p - y) * (p - y);
        }
    }
    total / predictions.len() as f64
}

/// Measure global sensitivity of the listed features.
///
/// For each feature the full dataset is perturbed at that single coordinate
/// and re-predicted, costing `|features| * N` forward passes beyond the one
/// baseline sweep. Entries come back sorted by sensitivity, descending.
pub fn sensitivity_global<P: Predictor>(
    model: &P,
    dataset: &Dataset,
    spec: &PerturbationSpec,
) -> Result<SensitivityReport> {
    spec.validate(dataset.n_features())?;
    let n = dataset.n_rows();

    let baseline: Vec<Vec<f64>> = (0..n).map(|i| model.predict_probs(dataset.row(i))).collect();
    let base_mse = probability_mse(&baseline, &dataset.labels);
    let base_labels: Vec<usize> = baseline.iter().map(|p| crate::predictor::argmax(p)).collect();
    let base_gaps: Vec<f64> = baseline.iter().map(|p| top_two_gap(p)).collect();

    let mut entries = Vec::with_capacity(spec.features.len());
    let mut all_gaps = Vec::with_capacity(spec.features.len());
    for &feature in &spec.features {
        let mut perturbed = Vec::with_capacity(n);
        for i in 0..n {
            let x = w_perturb(dataset.row(i), feature, spec.w, spec.mode)?;
            perturbed.push(model.predict_probs(&x));
        }
        let mse = probability_mse(&perturbed, &dataset.labels);
        let flips = perturbed
            .iter()
            .zip(&base_labels)
            .filter(|(p, &l)| crate::predictor::argmax(p) != l)
            .count();
        let gaps: Vec<(f64, f64)> = base_gaps
            .iter()
            .zip(&perturbed)
            .map(|(&before, p)| (before, top_two_gap(p)))
            .collect();
        let signed = mse - base_mse;
        entries.push(SensitivityEntry {
            feature,
            name: dataset.feature_names[feature].clone(),
            sensitivity: signed.abs(),
            sensitivity_signed: signed,
            flip_rate: flips as f64 / n as f64,
            mean_top2_gap_before: gaps.iter().map(|g| g.0).sum::<f64>() / n as f64,
            mean_top2_gap_after: gaps.iter().map(|g| g.1).sum::<f64>() / n as f64,
        });
        all_gaps.push(gaps);
    }

    // Sort entries (and their gap rows) by sensitivity descending; ties keep
    // the lower feature index first.
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.sort_by(|&a, &b| {
        entries[b]
            .sensitivity
            .total_cmp(&entries[a].sensitivity)
            .then(entries[a].feature.cmp(&entries[b].feature))
    });
    let entries = idx.iter().map(|&i| entries[i].clone()).collect();
    let instance_gaps = idx.iter().map(|&i| all_gaps[i].clone()).collect();

    Ok(SensitivityReport {
        w: spec.w,
        mode: spec.mode,
        entries,
        instance_gaps,
    })
}
