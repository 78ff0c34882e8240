//! The black-box oracle: a 1-D convolutional autoencoder over the feature
//! axis with a softmax classification head on the pooled embedding.
//!
//! Encoder: conv -> ELU -> max-pool (switch positions recorded). Decoder:
//! switch-unpool -> transposed conv -> sigmoid. The reconstruction MSE (plus
//! an L2 penalty on the encoder kernels) and the classification cross-entropy
//! are weighted and backpropagated jointly through a hand-rolled Adam loop,
//! so training is bit-reproducible per seed.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_f64_blob, write_f64_blob, Dataset};
use crate::error::{Error, Result};
use crate::nn::{self, Adam};
use crate::predictor::{argmax, Predictor};

/// Fixed geometry of one model: derived once, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub n_classes: usize,
    pub channels: usize,
    pub kernel_len: usize,
    pub pool_size: usize,
    /// Pooled windows per channel; `channels * pooled_len = embedding_dim`.
    pub pooled_len: usize,
    pub embedding_dim: usize,
}

impl Architecture {
    /// Pick (channels, pool size) so that `channels * ceil(M / pool)` lands as
    /// close as possible to the requested embedding size while staying below
    /// the input dimension.
    pub fn derive(
        input_dim: usize,
        n_classes: usize,
        embedding_target: usize,
        channels_pref: usize,
        kernel_len_pref: usize,
    ) -> Result<Self> {
        if input_dim < 2 {
            return Err(Error::InvalidParam("need at least 2 input features".into()));
        }
        if n_classes < 2 {
            return Err(Error::TooFewClasses(n_classes));
        }
        let target = embedding_target.max(1);
        // Geometries whose pooling collapses a channel into a single window
        // lose all positional information; prefer at least two windows.
        let mut best: Option<(usize, usize, usize, usize, usize)> = None;
        for ch in 1..=16usize.min(input_dim) {
            for pool in 1..=input_dim {
                let pooled = input_dim.div_ceil(pool);
                let k = ch * pooled;
                if k >= input_dim {
                    continue;
                }
                let gap = k.abs_diff(target);
                let ch_dist = ch.abs_diff(channels_pref.max(1));
                let single_window = usize::from(pooled < 2);
                let cand = (single_window, gap, ch_dist, ch, pool);
                if best.map_or(true, |b| cand < b) {
                    best = Some(cand);
                }
            }
        }
        let (_, _, _, channels, pool_size) = best.ok_or_else(|| {
            Error::InvalidParam(format!(
                "no pooling geometry fits an embedding below {input_dim} features"
            ))
        })?;
        let pooled_len = input_dim.div_ceil(pool_size);
        let mut kernel_len = kernel_len_pref.clamp(1, input_dim);
        if kernel_len % 2 == 0 {
            kernel_len -= 1;
        }
        Ok(Self {
            input_dim,
            n_classes,
            channels,
            kernel_len,
            pool_size,
            pooled_len,
            embedding_dim: channels * pooled_len,
        })
    }

    fn pad(&self) -> usize {
        self.kernel_len / 2
    }
}

/// Per-window argmax positions recorded during max-pooling; positions are
/// absolute indices into the convolution output of each channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSwitches {
    pub positions: Vec<usize>,
    pub input_len: usize,
    pub channels: usize,
    pub pool_size: usize,
}

/// Training hyperparameters for the joint loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha_r: f64,
    pub alpha_ce: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// None picks ceil(0.06 * M).
    pub embedding_dim: Option<usize>,
    pub channels: usize,
    pub kernel_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_r: 1.0,
            alpha_ce: 1.0,
            lambda: 1e-4,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            embedding_dim: None,
            channels: 2,
            kernel_len: 9,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.alpha_r < 0.0 || self.alpha_ce < 0.0 {
            return Err(Error::InvalidParam("loss weights must be non-negative".into()));
        }
        if self.alpha_r == 0.0 && self.alpha_ce == 0.0 {
            return Err(Error::InvalidParam("at least one loss weight must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidParam("lambda must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParam("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParam("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Class probabilities, the argmax label, and the embedding for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
    pub embedding: Vec<f64>,
}

/// Mean reconstruction and cross-entropy loss of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub reconstruction: f64,
    pub cross_entropy: f64,
    pub total: f64,
}

// Flat parameter layout: enc_w | enc_b | dec_w | dec_b | head_w | head_b.
#[derive(Debug, Clone, Copy)]
struct Layout {
    enc_w: usize,
    enc_b: usize,
    dec_w: usize,
    dec_b: usize,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    fn of(arch: &Architecture) -> Self {
        let conv = arch.channels * arch.kernel_len;
        let enc_w = 0;
        let enc_b = enc_w + conv;
        let dec_w = enc_b + arch.channels;
        let dec_b = dec_w + conv;
        let head_w = dec_b + 1;
        let head_b = head_w + arch.n_classes * arch.embedding_dim;
        Self {
            enc_w,
            enc_b,
            dec_w,
            dec_b,
            head_w,
            head_b,
            total: head_b + arch.n_classes,
        }
    }
}

/// The trained black-box classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderClassifier {
    pub arch: Architecture,
    pub config: TrainConfig,
    pub(crate) params: Vec<f64>,
    /// Per-feature train minima/maxima; reconstruction targets are inputs
    /// min-max rescaled into [0,1] to match the sigmoid output range.
    pub(crate) recon_min: Vec<f64>,
    pub(crate) recon_max: Vec<f64>,
}

struct RowForward {
    pre: Vec<f64>, // channels * M conv pre-activations
    z: Vec<f64>,
    switches: Vec<usize>,
    xprime: Vec<f64>,
    probs: Vec<f64>,
}

impl AutoencoderClassifier {
    /// Fresh Glorot-initialized model; reconstruction bounds default to [0,1].
    pub fn new(arch: Architecture, config: TrainConfig) -> Self {
        let layout = Layout::of(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.total];
        let conv = arch.channels * arch.kernel_len;
        for p in &mut params[layout.enc_w..layout.enc_w + conv] {
            *p = nn::glorot(&mut rng, arch.kernel_len, arch.kernel_len);
        }
        for p in &mut params[layout.dec_w..layout.dec_w + conv] {
            *p = nn::glorot(&mut rng, arch.kernel_len * arch.channels, arch.kernel_len);
        }
        let head = arch.n_classes * arch.embedding_dim;
        for p in &mut params[layout.head_w..layout.head_w + head] {
            *p = nn::glorot(&mut rng, arch.embedding_dim, arch.n_classes);
        }
        Self {
            recon_min: vec![0.0; arch.input_dim],
            recon_max: vec![1.0; arch.input_dim],
            arch,
            config,
            params,
        }
    }

    fn layout(&self) -> Layout {
        Layout::of(&self.arch)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn encoder_kernels(&self) -> &[f64] {
        let l = self.layout();
        &self.params[l.enc_w..l.enc_w + self.arch.channels * self.arch.kernel_len]
    }

    fn head_weights(&self) -> &[f64] {
        let l = self.layout();
        &self.params[l.head_w..l.head_w + self.arch.n_classes * self.arch.embedding_dim]
    }

    /// Encoder forward pass: conv -> ELU -> max-pool with recorded switches.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, PoolSwitches)> {
        let fwd = self.forward_encoder(x)?;
        Ok((
            fwd.0,
            PoolSwitches {
                positions: fwd.2,
                input_len: self.arch.input_dim,
                channels: self.arch.channels,
                pool_size: self.arch.pool_size,
            },
        ))
    }

    // Returns (z, pre, switch positions).
    fn forward_encoder(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
        let a = &self.arch;
        if x.len() != a.input_dim {
            return Err(Error::DimensionMismatch {
                expected: a.input_dim,
                got: x.len(),
            });
        }
        let l = self.layout();
        let m = a.input_dim;
        let kl = a.kernel_len;
        let pad = a.pad();
        let mut pre = vec![0.0; a.channels * m];
        for ch in 0..a.channels {
            let w = &self.params[l.enc_w + ch * kl..l.enc_w + (ch + 1) * kl];
            let b = self.params[l.enc_b + ch];
            let out = &mut pre[ch * m..(ch + 1) * m];
            for (i, o) in out.iter_mut().enumerate() {
                let t_lo = pad.saturating_sub(i);
                let t_hi = (m + pad - i).min(kl);
                let mut s = b;
                for t in t_lo..t_hi {
                    s += w[t] * x[i + t - pad];
                }
                *o = s;
            }
        }
        let mut z = vec![0.0; a.embedding_dim];
        let mut switches = vec![0; a.embedding_dim];
        for ch in 0..a.channels {
            for p in 0..a.pooled_len {
                let start = p * a.pool_size;
                let end = ((p + 1) * a.pool_size).min(m);
                let mut best_i = start;
                let mut best_v = nn::elu(pre[ch * m + start]);
                for i in start + 1..end {
                    let v = nn::elu(pre[ch * m + i]);
                    if v > best_v {
                        best_v = v;
                        best_i = i;
                    }
                }
                z[ch * a.pooled_len + p] = best_v;
                switches[ch * a.pooled_len + p] = best_i;
            }
        }
        Ok((z, pre, switches))
    }

    fn check_switches(&self, switches: &PoolSwitches) -> Result<()> {
        let a = &self.arch;
        if switches.positions.len() != a.embedding_dim
            || switches.input_len != a.input_dim
            || switches.channels != a.channels
            || switches.pool_size != a.pool_size
        {
            return Err(Error::GeometryMismatch(format!(
                "switches carry {} positions for input {} (model expects {} over {})",
                switches.positions.len(),
                switches.input_len,
                a.embedding_dim,
                a.input_dim
            )));
        }
        for (k, &pos) in switches.positions.iter().enumerate() {
            let p = k % a.pooled_len;
            let start = p * a.pool_size;
            let end = ((p + 1) * a.pool_size).min(a.input_dim);
            if pos < start || pos >= end {
                return Err(Error::GeometryMismatch(format!(
                    "switch {k} at {pos} outside window [{start}, {end})"
                )));
            }
        }
        Ok(())
    }

    /// Place pooled values back at their recorded positions, zeros elsewhere.
    pub fn unpool(&self, z: &[f64], switches: &PoolSwitches) -> Vec<f64> {
        let a = &self.arch;
        let mut u = vec![0.0; a.channels * a.input_dim];
        for (k, (&v, &pos)) in z.iter().zip(&switches.positions).enumerate() {
            let ch = k / a.pooled_len;
            u[ch * a.input_dim + pos] = v;
        }
        u
    }

    /// Decoder forward pass: switch-unpool -> transposed conv -> sigmoid.
    pub fn decode(&self, z: &[f64], switches: &PoolSwitches) -> Result<Vec<f64>> {
        let a = &self.arch;
        if z.len() != a.embedding_dim {
            return Err(Error::DimensionMismatch {
                expected: a.embedding_dim,
                got: z.len(),
            });
        }
        self.check_switches(switches)?;
        let dpre = self.decoder_pre(z, &switches.positions);
        Ok(dpre.iter().map(|&v| nn::sigmoid(v)).collect())
    }

    // Decoder pre-activations; exploits unpool sparsity (only one live
    // position per pooled window).
    fn decoder_pre(&self, z: &[f64], positions: &[usize]) -> Vec<f64> {
        let a = &self.arch;
        let l = self.layout();
        let m = a.input_dim;
        let kl = a.kernel_len;
        let pad = a.pad();
        let mut dpre = vec![self.params[l.dec_b]; m];
        for (k, (&v, &pos)) in z.iter().zip(positions).enumerate() {
            if v == 0.0 {
                continue;
            }
            let ch = k / a.pooled_len;
            let w = &self.params[l.dec_w + ch * kl..l.dec_w + (ch + 1) * kl];
            // u[ch][pos] feeds output i = pos - t + pad.
            for (t, &wt) in w.iter().enumerate() {
                let i = pos + pad;
                if i >= t && i - t < m {
                    dpre[i - t] += wt * v;
                }
            }
        }
        dpre
    }

    fn forward_row(&self, x: &[f64]) -> Result<RowForward> {
        let (z, pre, switches) = self.forward_encoder(x)?;
        let dpre = self.decoder_pre(&z, &switches);
        let xprime: Vec<f64> = dpre.iter().map(|&v| nn::sigmoid(v)).collect();
        let logits = self.head_logits(&z);
        let probs = nn::softmax(&logits);
        Ok(RowForward {
            pre,
            z,
            switches,
            xprime,
            probs,
        })
    }

    fn head_logits(&self, z: &[f64]) -> Vec<f64> {
        let a = &self.arch;
        let l = self.layout();
        let hw = self.head_weights();
        (0..a.n_classes)
            .map(|c| {
                let row = &hw[c * a.embedding_dim..(c + 1) * a.embedding_dim];
                self.params[l.head_b + c]
                    + row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Reconstruction target for one feature: the standardized value rescaled
    /// into [0,1] by the train min/max (0.5 for constant features).
    fn recon_target(&self, j: usize, v: f64) -> f64 {
        let span = self.recon_max[j] - self.recon_min[j];
        if span > 0.0 {
            (v - self.recon_min[j]) / span
        } else {
            0.5
        }
    }

    /// Joint loss over all rows of `features`: `(total, l_r, l_ce)` with
    /// `total = alpha_r * l_r + alpha_ce * l_ce`.
    pub fn joint_loss(&self, features: &Array2<f64>, labels: &[usize]) -> Result<(f64, f64, f64)> {
        let rows: Vec<usize> = (0..features.nrows()).collect();
        let (_, total, l_r, l_ce) = self.batch_pass(features, labels, &rows, false)?;
        Ok((total, l_r, l_ce))
    }

    /// Analytic gradients of the joint loss over all rows, flattened in the
    /// checkpoint parameter order.
    pub fn analytic_gradients(
        &self,
        features: &Array2<f64>,
        labels: &[usize],
    ) -> Result<Vec<f64>> {
        let rows: Vec<usize> = (0..features.nrows()).collect();
        let (grads, _, _, _) = self.batch_pass(features, labels, &rows, true)?;
        Ok(grads.expect("gradients requested"))
    }

    // Forward (and optionally backward) pass over a batch of row indices.
    #[allow(clippy::type_complexity)]
    fn batch_pass(
        &self,
        features: &Array2<f64>,
        labels: &[usize],
        rows: &[usize],
        with_grads: bool,
    ) -> Result<(Option<Vec<f64>>, f64, f64, f64)> {
        if rows.is_empty() {
            return Err(Error::InvalidParam("empty batch".into()));
        }
        let a = &self.arch;
        let l = self.layout();
        let m = a.input_dim;
        let kl = a.kernel_len;
        let pad = a.pad();
        let b = rows.len() as f64;

        let mut grads = if with_grads {
            Some(vec![0.0; self.params.len()])
        } else {
            None
        };
        let mut sum_sq = 0.0;
        let mut sum_ce = 0.0;

        for &r in rows {
            let x = features.row(r);
            let x = x.to_slice().expect("row-major layout");
            let fwd = self.forward_row(x)?;
            let label = labels[r];

            for (j, &xp) in fwd.xprime.iter().enumerate() {
                let d = self.recon_target(j, x[j]) - xp;
                sum_sq += d * d;
            }
            sum_ce += nn::cross_entropy(&fwd.probs, label);

            let Some(g) = grads.as_mut() else { continue };

            // Classification path (scaled by alpha_ce / batch).
            let ce_scale = self.config.alpha_ce / b;
            let mut dz = vec![0.0; a.embedding_dim];
            let hw = self.head_weights();
            for c in 0..a.n_classes {
                let dlogit = (fwd.probs[c] - if c == label { 1.0 } else { 0.0 }) * ce_scale;
                g[l.head_b + c] += dlogit;
                let row = &hw[c * a.embedding_dim..(c + 1) * a.embedding_dim];
                for k in 0..a.embedding_dim {
                    g[l.head_w + c * a.embedding_dim + k] += dlogit * fwd.z[k];
                    dz[k] += dlogit * row[k];
                }
            }

            // Reconstruction path (scaled by alpha_r / (batch * M)).
            let r_scale = 2.0 * self.config.alpha_r / (b * m as f64);
            let mut ddpre = vec![0.0; m];
            for (j, dd) in ddpre.iter_mut().enumerate() {
                let xp = fwd.xprime[j];
                let err = xp - self.recon_target(j, x[j]);
                *dd = r_scale * err * xp * (1.0 - xp);
                g[l.dec_b] += *dd;
            }
            for (k, (&v, &pos)) in fwd.z.iter().zip(&fwd.switches).enumerate() {
                let ch = k / a.pooled_len;
                let w = &self.params[l.dec_w + ch * kl..l.dec_w + (ch + 1) * kl];
                let mut du = 0.0;
                for (t, &wt) in w.iter().enumerate() {
                    let i = pos + pad;
                    if i >= t && i - t < m {
                        g[l.dec_w + ch * kl + t] += ddpre[i - t] * v;
                        du += ddpre[i - t] * wt;
                    }
                }
                dz[k] += du;
            }

            // Through the pool and ELU into the encoder parameters; gradient
            // reaches only the recorded argmax positions.
            for (k, (&dzk, &pos)) in dz.iter().zip(&fwd.switches).enumerate() {
                if dzk == 0.0 {
                    continue;
                }
                let ch = k / a.pooled_len;
                let dpre_val = dzk * nn::elu_prime(fwd.pre[ch * m + pos]);
                g[l.enc_b + ch] += dpre_val;
                let t_lo = pad.saturating_sub(pos);
                let t_hi = (m + pad - pos).min(kl);
                for t in t_lo..t_hi {
                    g[l.enc_w + ch * kl + t] += dpre_val * x[pos + t - pad];
                }
            }
        }

        let n_el = b * m as f64;
        let enc_w = &self.params[l.enc_w..l.enc_w + a.channels * kl];
        let reg: f64 = enc_w.iter().map(|w| w * w).sum();
        let l_r = sum_sq / n_el + self.config.lambda * reg;
        let l_ce = sum_ce / b;
        let total = self.config.alpha_r * l_r + self.config.alpha_ce * l_ce;

        if let Some(g) = grads.as_mut() {
            let scale = 2.0 * self.config.alpha_r * self.config.lambda;
            for (gi, wi) in g[l.enc_w..l.enc_w + a.channels * kl].iter_mut().zip(enc_w) {
                *gi += scale * wi;
            }
        }
        Ok((grads, total, l_r, l_ce))
    }

    /// Full prediction for one instance.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let (z, _) = self.encode(x)?;
        let probs = nn::softmax(&self.head_logits(&z));
        Ok(Prediction {
            label: argmax(&probs),
            embedding: z,
            probs,
        })
    }

    /// Batched prediction; rows evaluated in parallel, results in input order.
    pub fn predict_batch(&self, features: &Array2<f64>) -> Result<Vec<Prediction>> {
        if features.ncols() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                got: features.ncols(),
            });
        }
        Ok((0..features.nrows())
            .into_par_iter()
            .map(|i| {
                self.predict(features.row(i).to_slice().expect("row-major layout"))
                    .expect("dimension checked")
            })
            .collect())
    }

    /// Train a new model on a standardized dataset. Batch order is derived
    /// from the seed, so the loss history is bit-reproducible.
    pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(Self, Vec<EpochLoss>)> {
        config.validate()?;
        let m = dataset.n_features();
        let target = config
            .embedding_dim
            .unwrap_or_else(|| (0.06 * m as f64).ceil() as usize);
        let arch = Architecture::derive(m, dataset.n_classes(), target, config.channels, config.kernel_len)?;
        let mut model = Self::new(arch, config.clone());

        for j in 0..m {
            let col = dataset.features.column(j);
            model.recon_min[j] = col.iter().cloned().fold(f64::INFINITY, f64::min);
            model.recon_max[j] = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }

        let mut adam = Adam::new(
            model.params.len(),
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.adam_epsilon,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = dataset.n_rows();
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut sum_r = 0.0;
            let mut sum_ce = 0.0;
            let mut sum_total = 0.0;
            for batch in order.chunks(config.batch_size) {
                let (grads, total, l_r, l_ce) =
                    model.batch_pass(&dataset.features, &dataset.labels, batch, true)?;
                if !total.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                adam.step(&mut model.params, &grads.expect("gradients requested"));
                let w = batch.len() as f64;
                sum_r += l_r * w;
                sum_ce += l_ce * w;
                sum_total += total * w;
            }
            history.push(EpochLoss {
                reconstruction: sum_r / n as f64,
                cross_entropy: sum_ce / n as f64,
                total: sum_total / n as f64,
            });
        }
        Ok((model, history))
    }

    /// Central finite difference of the joint loss along one parameter.
    pub fn numerical_gradient(
        &self,
        features: &Array2<f64>,
        labels: &[usize],
        index: usize,
        epsilon: f64,
    ) -> Result<f64> {
        let mut probe = self.clone();
        probe.params[index] = self.params[index] + epsilon;
        let (plus, _, _) = probe.joint_loss(features, labels)?;
        probe.params[index] = self.params[index] - epsilon;
        let (minus, _, _) = probe.joint_loss(features, labels)?;
        Ok((plus - minus) / (2.0 * epsilon))
    }

    /// Compare analytic gradients against central finite differences on up to
    /// 100 randomly sampled parameters (all of them for small models) and
    /// return the maximum relative error. Both-tiny gradients (|g| < 1e-12)
    /// count as zero error.
    pub fn gradient_check(
        &self,
        features: &Array2<f64>,
        labels: &[usize],
        epsilon: f64,
    ) -> Result<f64> {
        if !(1e-7..=1e-3).contains(&epsilon) {
            return Err(Error::InvalidParam(format!(
                "epsilon {epsilon} outside [1e-7, 1e-3]"
            )));
        }
        let analytic = self.analytic_gradients(features, labels)?;
        let mut indices: Vec<usize> = (0..self.params.len()).collect();
        if indices.len() > 100 {
            let mut rng = ChaCha8Rng::seed_from_u64(0x67c0_ffee);
            indices.shuffle(&mut rng);
            indices.truncate(100);
        }
        let mut max_rel: f64 = 0.0;
        for idx in indices {
            let numeric = self.numerical_gradient(features, labels, idx, epsilon)?;
            max_rel = max_rel.max(relative_error(analytic[idx], numeric));
        }
        Ok(max_rel)
    }

    /// Write the checkpoint: JSON header plus a raw little-endian f64 blob
    /// (parameters, then reconstruction min/max).
    pub fn save(&self, json_path: &Path, bin_path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            schema_version: 1,
            arch: self.arch.clone(),
            config: self.config.clone(),
            n_params: self.params.len(),
            bin_file: bin_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        std::fs::write(json_path, serde_json::to_string_pretty(&header)?)
            .map_err(|e| Error::io(json_path.display().to_string(), e))?;
        let mut blob = self.params.clone();
        blob.extend_from_slice(&self.recon_min);
        blob.extend_from_slice(&self.recon_max);
        write_f64_blob(bin_path, &blob)
    }

    /// Load a checkpoint written by [`save`](Self::save); predictions of the
    /// loaded model are bit-identical to the saved one.
    pub fn load(json_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(json_path)
            .map_err(|e| Error::io(json_path.display().to_string(), e))?;
        let header: CheckpointHeader = serde_json::from_str(&text)?;
        let bin_path = json_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.bin_file);
        let blob = read_f64_blob(&bin_path)?;
        let m = header.arch.input_dim;
        let expected = header.n_params + 2 * m;
        if blob.len() != expected || header.n_params != Layout::of(&header.arch).total {
            return Err(Error::MalformedArtifact {
                path: bin_path.display().to_string(),
                reason: format!("expected {} values, found {}", expected, blob.len()),
            });
        }
        Ok(Self {
            params: blob[..header.n_params].to_vec(),
            recon_min: blob[header.n_params..header.n_params + m].to_vec(),
            recon_max: blob[header.n_params + m..].to_vec(),
            arch: header.arch,
            config: header.config,
        })
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    schema_version: u32,
    arch: Architecture,
    config: TrainConfig,
    n_params: usize,
    bin_file: String,
}

impl Predictor for AutoencoderClassifier {
    fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn num_classes(&self) -> usize {
        self.arch.n_classes
    }

    fn predict_probs(&self, x: &[f64]) -> Vec<f64> {
        self.predict(x).expect("input dimension mismatch").probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn tiny_arch(m: usize, k: usize, c: usize) -> Architecture {
        Architecture::derive(m, c, k, 1, 3).unwrap()
    }

    // A 1-channel model with a 1-tap identity kernel and pool window 2.
    fn identity_model(m: usize) -> AutoencoderClassifier {
        let arch = Architecture {
            input_dim: m,
            n_classes: 2,
            channels: 1,
            kernel_len: 1,
            pool_size: 2,
            pooled_len: m.div_ceil(2),
            embedding_dim: m.div_ceil(2),
        };
        let mut model = AutoencoderClassifier::new(arch, TrainConfig::default());
        for p in model.params.iter_mut() {
            *p = 0.0;
        }
        model.params[0] = 1.0; // enc_w single tap
        model
    }

    #[test]
    fn derive_matches_requested_embedding() {
        let a = Architecture::derive(12, 2, 4, 4, 9).unwrap();
        assert_eq!(a.embedding_dim, 4);
        assert!(a.embedding_dim < a.input_dim);
        assert_eq!(a.channels * a.pooled_len, a.embedding_dim);
        // Full-span pooling is avoided when a multi-window geometry exists.
        assert!(a.pooled_len >= 2);

        let a = Architecture::derive(500, 4, 30, 4, 9).unwrap();
        assert_eq!(a.embedding_dim, 30);
        assert!(a.pooled_len >= 2);
    }

    #[test]
    fn encode_zero_model_gives_zero_embedding() {
        let mut model = AutoencoderClassifier::new(tiny_arch(8, 4, 2), TrainConfig::default());
        for p in model.params.iter_mut() {
            *p = 0.0;
        }
        let (z, _) = model.encode(&[1.0, -2.0, 3.0, 0.5, -1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_identity_kernel_pools_maxima_and_switches() {
        let model = identity_model(4);
        let (z, sw) = model.encode(&[1.0, 3.0, 2.0, 0.0]).unwrap();
        assert_eq!(z, vec![3.0, 2.0]);
        assert_eq!(sw.positions, vec![1, 2]);
    }

    #[test]
    fn encode_is_deterministic() {
        let model = AutoencoderClassifier::new(tiny_arch(10, 4, 3), TrainConfig::default());
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let a = model.encode(&x).unwrap();
        let b = model.encode(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_rejects_wrong_length() {
        let model = AutoencoderClassifier::new(tiny_arch(8, 4, 2), TrainConfig::default());
        assert!(model.encode(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn unpool_places_values_at_switches() {
        let model = identity_model(4);
        let (z, sw) = model.encode(&[1.0, 3.0, 2.0, 0.0]).unwrap();
        let u = model.unpool(&z, &sw);
        assert_eq!(u, vec![0.0, 3.0, 2.0, 0.0]);
    }

    #[test]
    fn decode_zero_decoder_gives_half_everywhere() {
        let model = identity_model(4);
        let (z, sw) = model.encode(&[1.0, 3.0, 2.0, 0.0]).unwrap();
        let x = model.decode(&z, &sw).unwrap();
        assert_eq!(x.len(), 4);
        for v in x {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn decode_output_is_sigmoid_bounded_and_m_long() {
        let model = AutoencoderClassifier::new(tiny_arch(9, 4, 2), TrainConfig::default());
        let x: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let (z, sw) = model.encode(&x).unwrap();
        let xp = model.decode(&z, &sw).unwrap();
        assert_eq!(xp.len(), 9);
        assert!(xp.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn decode_rejects_foreign_switches() {
        let model = identity_model(4);
        let (z, mut sw) = model.encode(&[1.0, 3.0, 2.0, 0.0]).unwrap();
        sw.positions[0] = 3; // outside window [0,2)
        assert!(model.decode(&z, &sw).is_err());
    }

    #[test]
    fn joint_loss_with_zero_reconstruction_weight() {
        let (d, _) = make_synthetic(16, 8, 2, 2, 3).unwrap();
        let mut config = TrainConfig {
            alpha_r: 0.0,
            alpha_ce: 2.0,
            ..TrainConfig::default()
        };
        config.embedding_dim = Some(4);
        let arch = tiny_arch(8, 4, 2);
        let model = AutoencoderClassifier::new(arch, config);
        let (total, _, l_ce) = model.joint_loss(&d.features, &d.labels).unwrap();
        assert_abs_diff_eq!(total, 2.0 * l_ce, epsilon = 1e-12);
    }

    #[test]
    fn joint_loss_zero_for_perfect_reconstruction() {
        // Zero parameters reconstruct 0.5 everywhere; inputs at the middle of
        // the recon bounds make the target 0.5 as well.
        let mut model = AutoencoderClassifier::new(
            tiny_arch(6, 3, 2),
            TrainConfig {
                lambda: 0.0,
                ..TrainConfig::default()
            },
        );
        for p in model.params.iter_mut() {
            *p = 0.0;
        }
        for j in 0..6 {
            model.recon_min[j] = -1.0;
            model.recon_max[j] = 1.0;
        }
        let xs = arr2(&[[0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]);
        let (_, l_r, _) = model.joint_loss(&xs, &[0]).unwrap();
        assert_abs_diff_eq!(l_r, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_head_cross_entropy_is_ln_c() {
        let mut model = AutoencoderClassifier::new(tiny_arch(8, 4, 4), TrainConfig::default());
        let l = model.layout();
        for p in model.params[l.head_w..].iter_mut() {
            *p = 0.0;
        }
        let xs = arr2(&[[0.2, -0.4, 1.0, 0.0, 0.3, -1.0, 0.5, 0.1]]);
        let (_, _, l_ce) = model.joint_loss(&xs, &[2]).unwrap();
        assert_abs_diff_eq!(l_ce, 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn predict_uniform_with_zero_head_and_shift_invariant_label() {
        let mut model = AutoencoderClassifier::new(tiny_arch(8, 4, 3), TrainConfig::default());
        let l = model.layout();
        for p in model.params[l.head_w..].iter_mut() {
            *p = 0.0;
        }
        let x = [0.4, -0.2, 0.9, 0.0, 0.7, -0.5, 0.2, 0.3];
        let p = model.predict(&x).unwrap();
        for &v in &p.probs {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }

        // Adding a constant to every logit must not change the label.
        let mut model = AutoencoderClassifier::new(tiny_arch(8, 4, 3), TrainConfig::default());
        let before = model.predict(&x).unwrap();
        assert_abs_diff_eq!(before.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        let l = model.layout();
        for c in 0..3 {
            model.params[l.head_b + c] += 3.7;
        }
        let after = model.predict(&x).unwrap();
        assert_eq!(before.label, after.label);
    }

    #[test]
    fn training_reduces_cross_entropy_and_is_reproducible() {
        let (d, _) = make_synthetic(80, 12, 3, 2, 5).unwrap();
        let config = TrainConfig {
            epochs: 30,
            embedding_dim: Some(4),
            seed: 9,
            ..TrainConfig::default()
        };
        let (_, hist) = AutoencoderClassifier::train(&d, &config).unwrap();
        assert!(hist.last().unwrap().cross_entropy < hist[0].cross_entropy);

        let (_, hist2) = AutoencoderClassifier::train(&d, &config).unwrap();
        let bits = |h: &[EpochLoss]| -> Vec<(u64, u64)> {
            h.iter()
                .map(|e| (e.reconstruction.to_bits(), e.cross_entropy.to_bits()))
                .collect()
        };
        assert_eq!(bits(&hist), bits(&hist2));
    }

    #[test]
    fn zero_classification_weight_leaves_head_at_init() {
        let (d, _) = make_synthetic(40, 10, 2, 2, 6).unwrap();
        let config = TrainConfig {
            alpha_ce: 0.0,
            alpha_r: 1.0,
            epochs: 5,
            embedding_dim: Some(4),
            seed: 3,
            ..TrainConfig::default()
        };
        let (trained, _) = AutoencoderClassifier::train(&d, &config).unwrap();
        let fresh = AutoencoderClassifier::new(trained.arch.clone(), config);
        let l = trained.layout();
        assert_eq!(
            &trained.params[l.head_w..],
            &fresh.params[l.head_w..],
            "head must receive no gradient when alpha_ce = 0"
        );
    }

    #[test]
    fn gradient_check_on_small_model() {
        let (d, _) = make_synthetic(8, 12, 3, 2, 11).unwrap();
        let config = TrainConfig {
            embedding_dim: Some(4),
            channels: 1,
            seed: 4,
            ..TrainConfig::default()
        };
        let arch = Architecture::derive(12, 2, 4, 1, 9).unwrap();
        let model = AutoencoderClassifier::new(arch, config);
        let err = model.gradient_check(&d.features, &d.labels, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_rejects_bad_epsilon() {
        let model = AutoencoderClassifier::new(tiny_arch(8, 4, 2), TrainConfig::default());
        let xs = arr2(&[[0.0; 8]]);
        assert!(model.gradient_check(&xs, &[0], 1e-2).is_err());
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (d, _) = make_synthetic(8, 10, 2, 2, 13).unwrap();
        let arch = Architecture::derive(10, 2, 4, 1, 5).unwrap();
        let model = AutoencoderClassifier::new(arch, TrainConfig::default());
        let analytic = model.analytic_gradients(&d.features, &d.labels).unwrap();
        // Pick a parameter with a healthy gradient and corrupt it.
        let idx = analytic
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        let numeric = model.numerical_gradient(&d.features, &d.labels, idx, 1e-5).unwrap();
        assert!(relative_error(analytic[idx], numeric) < 1e-4);
        assert!(relative_error(analytic[idx] + 0.1, numeric) > 1e-2);
    }

    #[test]
    fn zero_loss_configuration_reports_zero_error() {
        let mut model = AutoencoderClassifier::new(
            tiny_arch(6, 3, 2),
            TrainConfig {
                alpha_ce: 0.0,
                alpha_r: 1.0,
                lambda: 0.0,
                ..TrainConfig::default()
            },
        );
        for p in model.params.iter_mut() {
            *p = 0.0;
        }
        for j in 0..6 {
            model.recon_min[j] = -1.0;
            model.recon_max[j] = 1.0;
        }
        let xs = arr2(&[[0.0; 6]]);
        let err = model.gradient_check(&xs, &[0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let (d, _) = make_synthetic(30, 10, 2, 2, 8).unwrap();
        let config = TrainConfig {
            epochs: 3,
            embedding_dim: Some(4),
            ..TrainConfig::default()
        };
        let (model, _) = AutoencoderClassifier::train(&d, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("model.json");
        let bin = dir.path().join("model.bin");
        model.save(&json, &bin).unwrap();
        let loaded = AutoencoderClassifier::load(&json).unwrap();
        let x = d.row(0);
        let a = model.predict(x).unwrap();
        let b = loaded.predict(x).unwrap();
        let bits = |p: &Prediction| p.probs.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.label, b.label);
    }
}
