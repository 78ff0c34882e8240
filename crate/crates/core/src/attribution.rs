//! Feature importance and impact: permutation importance, Shapley values
//! (exact enumeration on small feature spaces, permutation sampling beyond),
//! SHAP stacking across surrogates, and leave-one-feature-out analysis.
//!
//! The Shapley value function substitutes "absent" features with the
//! background mean and plays on the probability of the model's predicted
//! class at the full instance.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{argmax, Predictor};
use crate::seeds;

/// Exact enumeration is limited to 2^15 coalitions.
pub const EXACT_SHAPLEY_LIMIT: usize = 15;

/// Non-negative per-feature usefulness in [0, 1] for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalImportance {
    pub values: Vec<f64>,
}

/// Signed per-feature effect in [-1, 1] for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalImpact {
    pub values: Vec<f64>,
    /// Raw Shapley values before range normalization.
    pub raw_phi: Vec<f64>,
}

/// Per-feature mean of local importances over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub values: Vec<f64>,
}

/// Per-feature global impact: mean signed impact plus the mean |phi| ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImpact {
    pub mean_impact: Vec<f64>,
    pub mean_abs: Vec<f64>,
    /// Feature indices by descending mean |phi|.
    pub ranking: Vec<usize>,
}

/// Per-feature mean drop in accuracy when that column is permuted, clipped at
/// zero and max-normalized into [0, 1].
pub fn permutation_importance<P: Predictor>(
    model: &P,
    x: &Array2<f64>,
    y: &[usize],
    n_repeats: usize,
    seed: u64,
) -> Result<GlobalImportance> {
    if n_repeats == 0 {
        return Err(Error::InvalidParam("n_repeats must be >= 1".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let n = x.nrows();
    let m = x.ncols();
    let accuracy = |xs: &Array2<f64>| -> f64 {
        (0..n)
            .filter(|&i| model.predict_label(xs.row(i).to_slice().expect("row-major")) == y[i])
            .count() as f64
            / n as f64
    };
    let baseline = accuracy(x);

    let mut values = vec![0.0; m];
    for (j, value) in values.iter_mut().enumerate() {
        let mut drop_sum = 0.0;
        for rep in 0..n_repeats {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seeds::derive(seed, (j * n_repeats + rep) as u64));
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut shuffled = x.clone();
            for (i, &src) in perm.iter().enumerate() {
                shuffled[[i, j]] = x[[src, j]];
            }
            drop_sum += baseline - accuracy(&shuffled);
        }
        *value = (drop_sum / n_repeats as f64).max(0.0);
    }

    let max = values.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in values.iter_mut() {
            *v /= max;
        }
    }
    Ok(GlobalImportance { values })
}

/// Value function for Shapley computation: plays a coalition by keeping
/// coalition features at the instance's values and resetting the rest to the
/// background mean, then reads one scalar off the model.
struct CoalitionGame<'a, F: Fn(&[f64]) -> f64> {
    x: &'a [f64],
    background: &'a [f64],
    feature_set: &'a [usize],
    f: F,
}

impl<F: Fn(&[f64]) -> f64> CoalitionGame<'_, F> {
    fn play(&self, mask: usize) -> f64 {
        let mut point = self.x.to_vec();
        for (bit, &feat) in self.feature_set.iter().enumerate() {
            if mask & (1 << bit) == 0 {
                point[feat] = self.background[feat];
            }
        }
        (self.f)(&point)
    }
}

/// Column means of the background data.
pub fn background_means(background: &Array2<f64>) -> Vec<f64> {
    let n = background.nrows() as f64;
    (0..background.ncols())
        .map(|j| background.column(j).sum() / n)
        .collect()
}

/// Exact Shapley values of `f` at `x` over `feature_set`, with absent
/// features replaced by the background mean. Enumerates all 2^k coalitions.
pub fn shapley_exact_fn<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    background: &[f64],
    feature_set: &[usize],
) -> Result<Vec<f64>> {
    let k = feature_set.len();
    if k > EXACT_SHAPLEY_LIMIT {
        return Err(Error::FeatureSetTooLarge(k, EXACT_SHAPLEY_LIMIT));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let game = CoalitionGame {
        x,
        background,
        feature_set,
        f,
    };
    let n_masks = 1usize << k;
    let mut value = vec![0.0; n_masks];
    for (mask, v) in value.iter_mut().enumerate() {
        *v = game.play(mask);
    }

    // Coalition weight |S|! (k - |S| - 1)! / k!.
    let mut factorial = vec![1.0f64; k + 1];
    for i in 1..=k {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let weight =
        |s: usize| -> f64 { factorial[s] * factorial[k - s - 1] / factorial[k] };

    let mut phi = vec![0.0; k];
    for mask in 0..n_masks {
        let s = (mask as u32).count_ones() as usize;
        for (bit, p) in phi.iter_mut().enumerate() {
            if mask & (1 << bit) == 0 {
                *p += weight(s) * (value[mask | (1 << bit)] - value[mask]);
            }
        }
    }
    Ok(phi)
}

/// Monte-Carlo permutation estimate of the Shapley values; converges to
/// [`shapley_exact_fn`] and satisfies efficiency exactly (the per-permutation
/// contributions telescope).
pub fn shapley_sampled_fn<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    background: &[f64],
    feature_set: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples < 100 {
        return Err(Error::InvalidParam(format!(
            "n_samples {n_samples} below the minimum of 100"
        )));
    }
    let k = feature_set.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = vec![0.0; k];

    let mut point = background.to_vec();
    // Features outside the set stay at the instance's own values throughout.
    for (j, v) in point.iter_mut().enumerate() {
        if !feature_set.contains(&j) {
            *v = x[j];
        }
    }
    let empty_point = point.clone();

    let mut order: Vec<usize> = (0..k).collect();
    for _ in 0..n_samples {
        order.shuffle(&mut rng);
        point.copy_from_slice(&empty_point);
        let mut prev = f(&point);
        for &bit in &order {
            let feat = feature_set[bit];
            point[feat] = x[feat];
            let cur = f(&point);
            phi[bit] += cur - prev;
            prev = cur;
        }
    }
    for p in phi.iter_mut() {
        *p /= n_samples as f64;
    }
    Ok(phi)
}

/// The scalar the Shapley games play on: probability of the class the model
/// predicts at the full instance.
pub fn predicted_class_prob_fn<'a, P: Predictor>(
    model: &'a P,
    x: &[f64],
) -> (impl Fn(&[f64]) -> f64 + 'a, usize) {
    let class = model.predict_label(x);
    (move |point: &[f64]| model.predict_probs(point)[class], class)
}

/// Exact Shapley values for a predictor; background rows supply the
/// feature-absent substitution means.
pub fn shapley_exact<P: Predictor>(
    model: &P,
    x: &[f64],
    background: &Array2<f64>,
    feature_set: &[usize],
) -> Result<Vec<f64>> {
    let means = background_means(background);
    let (f, _) = predicted_class_prob_fn(model, x);
    shapley_exact_fn(f, x, &means, feature_set)
}

/// Sampled Shapley values for a predictor.
pub fn shapley_sampled<P: Predictor>(
    model: &P,
    x: &[f64],
    background: &Array2<f64>,
    feature_set: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let means = background_means(background);
    let (f, _) = predicted_class_prob_fn(model, x);
    shapley_sampled_fn(f, x, &means, feature_set, n_samples, seed)
}

/// Squash raw Shapley values into the [-1, 1] impact range: divide by
/// max(1, max|phi|) so in-range values and their ratios are preserved.
pub fn impacts_from_shap(raw_phi: &[f64]) -> LocalImpact {
    let max_abs = raw_phi.iter().map(|p| p.abs()).fold(0.0f64, f64::max);
    let scale = max_abs.max(1.0);
    LocalImpact {
        values: raw_phi.iter().map(|p| p / scale).collect(),
        raw_phi: raw_phi.to_vec(),
    }
}

/// Importance view of an impact vector: absolute values, already in [0, 1].
pub fn importance_from_impact(impact: &LocalImpact) -> LocalImportance {
    LocalImportance {
        values: impact.values.iter().map(|v| v.abs()).collect(),
    }
}

/// Mean |phi| per feature across instances, with a descending ranking.
pub fn global_mean_abs_shap(local: &[Vec<f64>]) -> Result<GlobalImpact> {
    if local.is_empty() {
        return Err(Error::InvalidParam("no local attributions given".into()));
    }
    let k = local[0].len();
    let n = local.len() as f64;
    let mut mean_impact = vec![0.0; k];
    let mut mean_abs = vec![0.0; k];
    for phi in local {
        if phi.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: phi.len(),
            });
        }
        for (j, &v) in phi.iter().enumerate() {
            mean_impact[j] += v / n;
            mean_abs[j] += v.abs() / n;
        }
    }
    let mut ranking: Vec<usize> = (0..k).collect();
    ranking.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    Ok(GlobalImpact {
        mean_impact,
        mean_abs,
        ranking,
    })
}

/// Average the Shapley vectors of several models sharing one feature space.
pub fn stacked_shap(per_model_phi: &[Vec<f64>]) -> Result<Vec<f64>> {
    if per_model_phi.is_empty() {
        return Err(Error::InvalidParam("no models to stack".into()));
    }
    let k = per_model_phi[0].len();
    let mut out = vec![0.0; k];
    for phi in per_model_phi {
        if phi.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: phi.len(),
            });
        }
        for (o, &v) in out.iter_mut().zip(phi) {
            *o += v / per_model_phi.len() as f64;
        }
    }
    Ok(out)
}

/// Result of removing one feature (background-mean substitution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResult {
    pub feature: usize,
    pub probs_before: Vec<f64>,
    pub probs_after: Vec<f64>,
    /// Per-class probability shift; sums to ~0 since both sides normalize.
    pub delta: Vec<f64>,
    pub label_flipped: bool,
}

/// Re-predict with one feature reset to the background mean.
pub fn what_if_remove<P: Predictor>(
    model: &P,
    x: &[f64],
    feature: usize,
    background: &Array2<f64>,
) -> Result<WhatIfResult> {
    if feature >= x.len() {
        return Err(Error::InvalidParam(format!(
            "feature {feature} out of range for {} features",
            x.len()
        )));
    }
    let means = background_means(background);
    let probs_before = model.predict_probs(x);
    let mut removed = x.to_vec();
    removed[feature] = means[feature];
    let probs_after = model.predict_probs(&removed);
    let delta: Vec<f64> = probs_after
        .iter()
        .zip(&probs_before)
        .map(|(a, b)| a - b)
        .collect();
    Ok(WhatIfResult {
        feature,
        label_flipped: argmax(&probs_after) != argmax(&probs_before),
        probs_before,
        probs_after,
        delta,
    })
}
