//! Supervised training of the dictionary on synthetic mixtures and the
//! decomposition-accuracy measurement.
//!
//! Each decomposition step contributes a classification term (cross-entropy
//! over class logits formed by max-pooling kernel activations within each
//! class block) and a reconstruction term (squared error of the selected
//! atom against the gain-scaled clip). Kernel selection is treated as
//! locally constant: gradients flow through the clamped activation and the
//! reconstruction, not through which kernel won, and the residual that feeds
//! the next step is detached.

use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{Adam, AdamConfig};
use crate::parallel;

use super::{dot, Dictionary, MixtureSample};

/// Loss, its two terms, and sparse kernel gradients for one step.
#[derive(Debug, Clone)]
pub struct StepLossResult {
    pub loss: f64,
    pub ce: f64,
    pub recon: f64,
    pub selected_kernel: usize,
    pub predicted_class: usize,
    /// Clamped activation of the selected kernel.
    pub activation: f64,
    /// Sparse gradient contributions: (kernel index, d-vector).
    pub grads: Vec<(usize, Vec<f64>)>,
}

/// One decomposition step against a fixed residual.
///
/// Class logits are the per-block max of `W^T r`; cross-entropy targets
/// `target_class`. The reconstruction `z * w_{j*}` (with `j*` the global
/// argmax and `z` its clamped activation) is regressed onto `target_vec`,
/// the gain-scaled clip embedding.
pub fn step_loss(
    dict: &Dictionary,
    residual: &[f64],
    target_class: usize,
    target_vec: &[f64],
) -> Result<StepLossResult> {
    if residual.len() != dict.dim() || target_vec.len() != dict.dim() {
        return Err(Error::invalid("residual/target dimension mismatch"));
    }
    if target_class >= dict.num_classes() {
        return Err(Error::invalid(format!(
            "target class {target_class} out of range"
        )));
    }
    let acts = dict.activations(residual);

    // block max-pool -> class logits
    let num_classes = dict.num_classes();
    let mut logits = vec![f64::NEG_INFINITY; num_classes];
    let mut argmax_in_block = vec![0usize; num_classes];
    for (j, &a) in acts.iter().enumerate() {
        let c = dict.class_of(j);
        if a > logits[c] {
            logits[c] = a;
            argmax_in_block[c] = j;
        }
    }

    // stable softmax
    let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max_logit).exp()).collect();
    let z_sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|&e| e / z_sum).collect();
    let ce = -(probs[target_class].max(1e-300)).ln();

    // global argmax = the winning class's block winner
    let mut best_class = 0usize;
    for c in 0..num_classes {
        if logits[c] > logits[best_class] {
            best_class = c;
        }
    }
    let j_star = argmax_in_block[best_class];
    let u = acts[j_star];
    let z = if u > 0.0 { u } else { 0.0 };

    let w_star = dict.kernel(j_star);
    let mut err = vec![0.0; dict.dim()];
    let mut recon = 0.0;
    for i in 0..dict.dim() {
        let e = z * w_star[i] - target_vec[i];
        err[i] = e;
        recon += e * e;
    }

    // CE gradient lands on each block's winning kernel
    let mut grads: Vec<(usize, Vec<f64>)> = Vec::with_capacity(num_classes + 1);
    for c in 0..num_classes {
        let coeff = probs[c] - if c == target_class { 1.0 } else { 0.0 };
        if coeff == 0.0 {
            continue;
        }
        let g: Vec<f64> = residual.iter().map(|&r| coeff * r).collect();
        grads.push((argmax_in_block[c], g));
    }
    // reconstruction gradient on the selected kernel:
    // dL/dw = 2 z e + 2 (e . w) 1[u > 0] r
    let mut g_rec = vec![0.0; dict.dim()];
    let ew = dot(&err, w_star);
    let gate = if u > 0.0 { 1.0 } else { 0.0 };
    for i in 0..dict.dim() {
        g_rec[i] = 2.0 * z * err[i] + 2.0 * ew * gate * residual[i];
    }
    grads.push((j_star, g_rec));

    Ok(StepLossResult {
        loss: ce + recon,
        ce,
        recon,
        selected_kernel: j_star,
        predicted_class: best_class,
        activation: z,
        grads,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct MartConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for MartConfig {
    fn default() -> Self {
        MartConfig {
            epochs: 5,
            batch_size: 32,
            lr: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MartReport {
    /// Mean per-sample loss of each minibatch, in order.
    pub batch_losses: Vec<f64>,
}

impl MartReport {
    /// Means over consecutive windows of `window` batches (tail dropped).
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        self.batch_losses
            .chunks_exact(window)
            .map(|c| c.iter().sum::<f64>() / window as f64)
            .collect()
    }
}

/// Unrolled loss and gradients for one mixture. The residual recursion uses
/// the model's own reconstructions, exactly as at inference time.
fn sample_loss_and_grads(dict: &Dictionary, sample: &MixtureSample) -> (f64, Vec<(usize, Vec<f64>)>) {
    let mut residual = sample.x_mix().to_vec();
    let mut loss = 0.0;
    let mut grads = Vec::new();
    for comp in sample.components() {
        let target: Vec<f64> = comp.clip.iter().map(|&v| comp.gain * v).collect();
        let step = step_loss(dict, &residual, comp.class_id, &target)
            .expect("dims validated by the mixture");
        loss += step.loss;
        let w = dict.kernel(step.selected_kernel);
        for (r, &wv) in residual.iter_mut().zip(w) {
            *r -= step.activation * wv;
        }
        grads.extend(step.grads);
    }
    (loss, grads)
}

/// Train the dictionary on synthetic mixtures with Adam, renormalizing every
/// kernel column to unit norm after each update.
pub fn train_mart<R: Rng + ?Sized>(
    dict: &mut Dictionary,
    data: &[MixtureSample],
    cfg: MartConfig,
    rng: &mut R,
) -> Result<MartReport> {
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("epochs and batch size must be positive"));
    }
    for m in data {
        if m.x_mix().len() != dict.dim() {
            return Err(Error::invalid("mixture dimension does not match dictionary"));
        }
        if m.class_sequence().iter().any(|&c| c >= dict.num_classes()) {
            return Err(Error::invalid("mixture class id out of dictionary range"));
        }
    }
    let n_params = dict.dim() * dict.num_kernels();
    let mut opt = Adam::new(n_params, AdamConfig::with_lr(cfg.lr));
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut batch_losses = Vec::new();
    let dim = dict.dim();
    for _ in 0..cfg.epochs {
        // Fisher-Yates shuffle from the explicit rng
        for i in (1..indices.len()).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        for batch in indices.chunks(cfg.batch_size) {
            let items: Vec<&MixtureSample> = batch.iter().map(|&i| &data[i]).collect();
            let frozen: &Dictionary = dict;
            let results = parallel::map(&items, |s| sample_loss_and_grads(frozen, s));
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for (l, gs) in &results {
                loss += l;
                for (j, g) in gs {
                    let dst = &mut grad[j * dim..(j + 1) * dim];
                    for (d, v) in dst.iter_mut().zip(g) {
                        *d += v;
                    }
                }
            }
            let inv = 1.0 / items.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(dict.kernels_mut(), &grad);
            dict.renormalize();
            batch_losses.push(loss * inv);
        }
    }
    Ok(MartReport { batch_losses })
}

/// Per-step top-1 class accuracy and exact-sequence accuracy on held-out
/// mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// `per_step[k]`: fraction of mixtures whose step-k prediction matched
    /// the true class at position k (among mixtures with a k-th component).
    pub per_step: Vec<f64>,
    /// Fraction of mixtures whose whole class sequence was recovered.
    pub exact_sequence: f64,
    pub num_samples: usize,
}

pub fn decomposition_accuracy(dict: &Dictionary, mixtures: &[MixtureSample]) -> Result<AccuracyReport> {
    if mixtures.is_empty() {
        return Err(Error::invalid("no mixtures to evaluate"));
    }
    let outcomes = parallel::map(mixtures, |m| {
        let truth = m.class_sequence();
        let trace = super::decompose(dict, m.x_mix(), truth.len())
            .expect("mixture dims validated on construction");
        let pred = trace.predicted_classes();
        let hits: Vec<bool> = truth.iter().zip(&pred).map(|(t, p)| t == p).collect();
        let exact = hits.iter().all(|&h| h);
        (hits, exact)
    });
    let max_k = outcomes.iter().map(|(h, _)| h.len()).max().unwrap_or(0);
    let mut correct = vec![0usize; max_k];
    let mut counted = vec![0usize; max_k];
    let mut exact_count = 0usize;
    for (hits, exact) in &outcomes {
        for (k, &h) in hits.iter().enumerate() {
            counted[k] += 1;
            correct[k] += h as usize;
        }
        exact_count += *exact as usize;
    }
    Ok(AccuracyReport {
        per_step: correct
            .iter()
            .zip(&counted)
            .map(|(&c, &n)| c as f64 / n as f64)
            .collect(),
        exact_sequence: exact_count as f64 / mixtures.len() as f64,
        num_samples: mixtures.len(),
    })
}
