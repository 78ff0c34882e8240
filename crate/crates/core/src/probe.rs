//! Attention probing of the black-box: per-head attention over the embedding
//! (or directly over the inputs), aggregation into a global attention vector,
//! and top-k / bottom-k feature selection.
//!
//! The probe is trained on top of the frozen model: the attended vector is
//! element-wise reweighted by softmax attention, then classified by a dense
//! softmax layer minimizing cross-entropy.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blackbox::AutoencoderClassifier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Adam};
use crate::predictor::argmax;

/// Where the attention attaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Attention over the raw input features.
    Input,
    /// Attention over the encoder embedding.
    Embedding,
}

/// Probe training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub mode: AttentionMode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            mode: AttentionMode::Input,
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

/// Multi-head attention probe with its dense classification layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProbe {
    pub mode: AttentionMode,
    /// Attended dimension: M in input mode, K in embedding mode.
    pub dim: usize,
    pub n_heads: usize,
    pub n_classes: usize,
    weights: Vec<f64>, // n_heads * dim * dim
    biases: Vec<f64>,  // n_heads * dim
    head_w: Vec<f64>,  // n_classes * dim
    head_b: Vec<f64>,  // n_classes
}

/// Softmaxed head diagonals averaged into one attention vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub mode: AttentionMode,
    /// Non-negative, sums to 1; one weight per attended unit.
    pub r: Vec<f64>,
}

/// Scores over the original input features with a chosen top-k cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub input_scores: Vec<f64>,
    /// Feature indices by descending score, lowest index first on ties.
    pub order: Vec<usize>,
    pub k: usize,
}

impl FeatureRanking {
    pub fn new(input_scores: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 || k > input_scores.len() {
            return Err(Error::InvalidParam(format!(
                "k = {k} outside [1, {}]",
                input_scores.len()
            )));
        }
        let order = descending_order(&input_scores);
        Ok(Self {
            input_scores,
            order,
            k,
        })
    }

    pub fn top_k(&self) -> &[usize] {
        &self.order[..self.k]
    }
}

fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

impl AttentionProbe {
    fn new(mode: AttentionMode, dim: usize, n_heads: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = vec![0.0; n_heads * dim * dim];
        for w in weights.iter_mut() {
            *w = nn::glorot(&mut rng, dim, dim);
        }
        let mut head_w = vec![0.0; n_classes * dim];
        for w in head_w.iter_mut() {
            *w = nn::glorot(&mut rng, dim, n_classes);
        }
        Self {
            mode,
            dim,
            n_heads,
            n_classes,
            weights,
            biases: vec![0.0; n_heads * dim],
            head_w,
            head_b: vec![0.0; n_classes],
        }
    }

    fn head_matrix(&self, h: usize) -> &[f64] {
        &self.weights[h * self.dim * self.dim..(h + 1) * self.dim * self.dim]
    }

    /// Attention weights for one head: softmax(W_h v + b_h).
    fn head_attention(&self, h: usize, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let w = self.head_matrix(h);
        let b = &self.biases[h * d..(h + 1) * d];
        let mut y = vec![0.0; d];
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &w[i * d..(i + 1) * d];
            *yi = b[i] + row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
        nn::softmax(&y)
    }

    /// Mean over heads of the attention-reweighted vector.
    pub fn omega_forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        for h in 0..self.n_heads {
            let s = self.head_attention(h, v);
            for ((o, &vi), &si) in out.iter_mut().zip(v).zip(&s) {
                *o += vi * si;
            }
        }
        for o in out.iter_mut() {
            *o /= self.n_heads as f64;
        }
        Ok(out)
    }

    /// Class probabilities for an attended vector.
    pub fn predict_probs_attended(&self, v: &[f64]) -> Result<Vec<f64>> {
        let a = self.omega_forward(v)?;
        let logits: Vec<f64> = (0..self.n_classes)
            .map(|c| {
                let row = &self.head_w[c * self.dim..(c + 1) * self.dim];
                self.head_b[c] + row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        Ok(nn::softmax(&logits))
    }

    pub fn predict_label_attended(&self, v: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_probs_attended(v)?))
    }
}

/// The attended representation of one instance under the probe's mode.
pub fn attended_vector(
    blackbox: &AutoencoderClassifier,
    x: &[f64],
    mode: AttentionMode,
) -> Result<Vec<f64>> {
    match mode {
        AttentionMode::Input => Ok(x.to_vec()),
        AttentionMode::Embedding => Ok(blackbox.encode(x)?.0),
    }
}

/// Train an attention probe against the frozen black-box.
///
/// In input mode the attention attaches to the raw features; in embedding
/// mode to the encoder output. Only the probe's parameters move.
pub fn train_probe(
    blackbox: &AutoencoderClassifier,
    dataset: &Dataset,
    k_heads: usize,
    config: &ProbeConfig,
) -> Result<AttentionProbe> {
    if k_heads == 0 {
        return Err(Error::InvalidParam("k_heads must be >= 1".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidParam("epochs and batch size must be >= 1".into()));
    }
    let n = dataset.n_rows();
    let dim = match config.mode {
        AttentionMode::Input => dataset.n_features(),
        AttentionMode::Embedding => blackbox.arch.embedding_dim,
    };

    // Attended vectors are fixed during probe training; precompute them.
    let mut attended = Array2::zeros((n, dim));
    for i in 0..n {
        let v = attended_vector(blackbox, dataset.row(i), config.mode)?;
        for (j, val) in v.into_iter().enumerate() {
            attended[[i, j]] = val;
        }
    }

    let c = dataset.n_classes();
    let mut probe = AttentionProbe::new(config.mode, dim, k_heads, c, config.seed);
    let n_params = probe.weights.len() + probe.biases.len() + probe.head_w.len() + probe.head_b.len();
    let mut adam = Adam::new(
        n_params,
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_epsilon,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();

    let d = dim;
    let nw = probe.weights.len();
    let nb = probe.biases.len();
    let nhw = probe.head_w.len();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = vec![0.0; n_params];
            let mut batch_loss = 0.0;
            for &r in batch {
                let v = attended.row(r);
                let v = v.to_slice().expect("row-major layout");
                let label = dataset.labels[r];

                // Forward, keeping per-head attentions.
                let mut attns = Vec::with_capacity(k_heads);
                let mut a = vec![0.0; d];
                for h in 0..k_heads {
                    let s = probe.head_attention(h, v);
                    for i in 0..d {
                        a[i] += v[i] * s[i] / k_heads as f64;
                    }
                    attns.push(s);
                }
                let logits: Vec<f64> = (0..c)
                    .map(|cl| {
                        let row = &probe.head_w[cl * d..(cl + 1) * d];
                        probe.head_b[cl] + row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>()
                    })
                    .collect();
                let probs = nn::softmax(&logits);
                batch_loss += nn::cross_entropy(&probs, label);

                // Backward.
                let mut da = vec![0.0; d];
                for cl in 0..c {
                    let dlogit = (probs[cl] - if cl == label { 1.0 } else { 0.0 }) * scale;
                    grads[nw + nb + nhw + cl] += dlogit;
                    let row = &probe.head_w[cl * d..(cl + 1) * d];
                    for i in 0..d {
                        grads[nw + nb + cl * d + i] += dlogit * a[i];
                        da[i] += dlogit * row[i];
                    }
                }
                for (h, s) in attns.iter().enumerate() {
                    // ds_i = da_i * v_i / H, then through the softmax Jacobian.
                    let mut ds = vec![0.0; d];
                    for i in 0..d {
                        ds[i] = da[i] * v[i] / k_heads as f64;
                    }
                    let dot: f64 = ds.iter().zip(s).map(|(a, b)| a * b).sum();
                    let gw = &mut grads[h * d * d..(h + 1) * d * d];
                    for i in 0..d {
                        let dy = s[i] * (ds[i] - dot);
                        if dy == 0.0 {
                            continue;
                        }
                        let row = &mut gw[i * d..(i + 1) * d];
                        for (gj, &vj) in row.iter_mut().zip(v) {
                            *gj += dy * vj;
                        }
                    }
                    for i in 0..d {
                        let dy = s[i] * (ds[i] - dot);
                        grads[nw + h * d + i] += dy;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }

            // Flatten parameters, step, scatter back.
            let mut params = Vec::with_capacity(n_params);
            params.extend_from_slice(&probe.weights);
            params.extend_from_slice(&probe.biases);
            params.extend_from_slice(&probe.head_w);
            params.extend_from_slice(&probe.head_b);
            adam.step(&mut params, &grads);
            probe.weights.copy_from_slice(&params[..nw]);
            probe.biases.copy_from_slice(&params[nw..nw + nb]);
            probe.head_w.copy_from_slice(&params[nw + nb..nw + nb + nhw]);
            probe.head_b.copy_from_slice(&params[nw + nb + nhw..]);
        }
    }
    Ok(probe)
}

/// Average the softmaxed diagonals of the attention heads into one
/// probability vector over the attended units.
pub fn extract_attention(probe: &AttentionProbe) -> AttentionSummary {
    let d = probe.dim;
    let mut r = vec![0.0; d];
    for h in 0..probe.n_heads {
        let w = probe.head_matrix(h);
        let diag: Vec<f64> = (0..d).map(|i| w[i * d + i]).collect();
        for (ri, si) in r.iter_mut().zip(nn::softmax(&diag)) {
            *ri += si / probe.n_heads as f64;
        }
    }
    AttentionSummary { mode: probe.mode, r }
}

/// Bridge latent attention weights to scores over the original features.
///
/// Embedding mode: a feature's score is the attention-weighted sum of the
/// absolute encoder kernel contributions along every path into each embedding
/// unit, with pooling treated as pass-through; the result is normalized to
/// sum 1 (uniform if the encoder is all zeros). Input mode is the identity.
pub fn project_to_inputs(
    summary: &AttentionSummary,
    blackbox: &AutoencoderClassifier,
) -> Vec<f64> {
    match summary.mode {
        AttentionMode::Input => summary.r.clone(),
        AttentionMode::Embedding => {
            let a = &blackbox.arch;
            let m = a.input_dim;
            let kl = a.kernel_len;
            let pad = kl / 2;
            let kernels = blackbox.encoder_kernels();
            let mut scores = vec![0.0; m];
            for (k, &rk) in summary.r.iter().enumerate() {
                let ch = k / a.pooled_len;
                let p = k % a.pooled_len;
                let w = &kernels[ch * kl..(ch + 1) * kl];
                let start = p * a.pool_size;
                let end = ((p + 1) * a.pool_size).min(m);
                for i in start..end {
                    let t_lo = pad.saturating_sub(i);
                    let t_hi = (m + pad - i).min(kl);
                    for t in t_lo..t_hi {
                        scores[i + t - pad] += rk * w[t].abs();
                    }
                }
            }
            let total: f64 = scores.iter().sum();
            if total > 0.0 {
                for s in scores.iter_mut() {
                    *s /= total;
                }
            } else {
                scores.fill(1.0 / m as f64);
            }
            scores
        }
    }
}

/// Split scores into the k highest (descending) and k lowest (ascending)
/// feature indices. The two sets are taken from opposite ends of one stable
/// descending order, so they are disjoint whenever 2k <= M.
pub fn top_bottom_k(scores: &[f64], k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = scores.len();
    if k == 0 || k > m {
        return Err(Error::InvalidParam(format!("k = {k} outside [1, {m}]")));
    }
    let order = descending_order(scores);
    let top = order[..k].to_vec();
    let bottom: Vec<usize> = order[m - k..].iter().rev().copied().collect();
    Ok((top, bottom))
}

/// Round to `digits` significant digits; used when serializing scores.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}
