//! Minimal trainable feed-forward network.
//!
//! Parameters live in one flat `Vec<f64>` (per-layer weight blocks in
//! out-major order, then the bias), which keeps the optimizer, gradient
//! checks, and serialization trivial. Hidden layers use GELU (tanh form),
//! the output layer is linear. Time values enter downstream models through
//! [`TimeEmbedding`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Gelu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Gelu => gelu(x),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Gelu => gelu_prime(x),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let s = GELU_C * (x + GELU_A * x * x * x);
    let t = s.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LayerSpec {
    in_dim: usize,
    out_dim: usize,
    w_off: usize,
    b_off: usize,
    activation: Activation,
}

/// Fully connected network with a flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    dims: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

/// Intermediates captured by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (layer count + 1 entries; last is the output).
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    preacts: Vec<Vec<f64>>,
}

impl DenseNet {
    /// Build a network with the given layer sizes, GELU on hidden layers and
    /// a linear output. `dims` runs input..output, so `[8, 64, 64, 3]` is a
    /// 3-layer network. Weights are Xavier-initialized from `rng`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("network needs at least input and output dims"));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("zero-width layer"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut off = 0usize;
        for i in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[i], dims[i + 1]);
            let activation = if i + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Gelu
            };
            layers.push(LayerSpec {
                in_dim,
                out_dim,
                w_off: off,
                b_off: off + in_dim * out_dim,
                activation,
            });
            off += in_dim * out_dim + out_dim;
        }
        let mut params = vec![0.0; off];
        for spec in &layers {
            let std = (2.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            for w in &mut params[spec.w_off..spec.w_off + spec.in_dim * spec.out_dim] {
                let g: f64 = StandardNormal.sample(rng);
                *w = g * std;
            }
        }
        Ok(DenseNet {
            dims: dims.to_vec(),
            layers,
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zero every parameter; the network then computes the zero function.
    pub fn zero_params(&mut self) {
        self.params.iter_mut().for_each(|p| *p = 0.0);
    }

    /// Forward pass returning the output and the cache for [`Self::backward`].
    pub fn forward(&self, input: &[f64]) -> (Vec<f64>, ForwardCache) {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut preacts = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for spec in &self.layers {
            let x = activations.last().unwrap();
            let mut pre = vec![0.0; spec.out_dim];
            for o in 0..spec.out_dim {
                let row = &self.params[spec.w_off + o * spec.in_dim..spec.w_off + (o + 1) * spec.in_dim];
                let mut acc = self.params[spec.b_off + o];
                for (w, xi) in row.iter().zip(x.iter()) {
                    acc += w * xi;
                }
                pre[o] = acc;
            }
            let post: Vec<f64> = pre.iter().map(|&v| spec.activation.apply(v)).collect();
            preacts.push(pre);
            activations.push(post);
        }
        (
            activations.last().unwrap().clone(),
            ForwardCache {
                activations,
                preacts,
            },
        )
    }

    /// Forward pass without keeping intermediates.
    pub fn output(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let mut x = input.to_vec();
        for spec in &self.layers {
            let mut next = vec![0.0; spec.out_dim];
            for (o, slot) in next.iter_mut().enumerate() {
                let row = &self.params[spec.w_off + o * spec.in_dim..spec.w_off + (o + 1) * spec.in_dim];
                let mut acc = self.params[spec.b_off + o];
                for (w, xi) in row.iter().zip(x.iter()) {
                    acc += w * xi;
                }
                *slot = spec.activation.apply(acc);
            }
            x = next;
        }
        x
    }

    /// Reverse-mode gradients. Returns flat parameter gradients (same layout
    /// as `params`) and the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(output_grad.len(), self.output_dim(), "output grad width mismatch");
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = output_grad.to_vec();
        for (li, spec) in self.layers.iter().enumerate().rev() {
            let pre = &cache.preacts[li];
            let x = &cache.activations[li];
            // through the activation
            for (d, &p) in delta.iter_mut().zip(pre.iter()) {
                *d *= spec.activation.derivative(p);
            }
            // parameter grads
            for o in 0..spec.out_dim {
                let d = delta[o];
                grads[spec.b_off + o] += d;
                let grow = &mut grads[spec.w_off + o * spec.in_dim..spec.w_off + (o + 1) * spec.in_dim];
                for (g, xi) in grow.iter_mut().zip(x.iter()) {
                    *g += d * xi;
                }
            }
            // input grads for the next (previous) layer
            let mut prev = vec![0.0; spec.in_dim];
            for o in 0..spec.out_dim {
                let d = delta[o];
                let row = &self.params[spec.w_off + o * spec.in_dim..spec.w_off + (o + 1) * spec.in_dim];
                for (p, w) in prev.iter_mut().zip(row.iter()) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        (grads, delta)
    }
}

/// Sinusoidal embedding of a scalar time in [0, 1]; output width is
/// `2 * num_frequencies`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    num_frequencies: usize,
}

impl TimeEmbedding {
    pub fn new(num_frequencies: usize) -> Self {
        TimeEmbedding { num_frequencies }
    }

    pub fn num_frequencies(&self) -> usize {
        self.num_frequencies
    }

    pub fn dim(&self) -> usize {
        2 * self.num_frequencies
    }

    pub fn features(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for i in 0..self.num_frequencies {
            let w = std::f64::consts::PI * (1u64 << i) as f64;
            out.push((w * t).sin());
            out.push((w * t).cos());
        }
        out
    }

    pub fn write_features(&self, t: f64, out: &mut Vec<f64>) {
        for i in 0..self.num_frequencies {
            let w = std::f64::consts::PI * (1u64 << i) as f64;
            out.push((w * t).sin());
            out.push((w * t).cos());
        }
    }
}

/// Adam with optional decoupled weight decay (decay 0 by default).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: first/second moment per parameter plus the step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(num_params: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.cfg.beta1 * self.m[i] + (1.0 - self.cfg.beta1) * g;
            self.v[i] = self.cfg.beta2 * self.v[i] + (1.0 - self.cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.cfg.lr * (mhat / (vhat.sqrt() + self.cfg.eps)
                + self.cfg.weight_decay * params[i]);
        }
    }
}

/// Result of comparing analytic gradients against central finite differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub params_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Check `loss`'s analytic gradient on every parameter of `net` with central
/// finite differences of step `eps`. The closure must return the loss and a
/// flat gradient aligned with `net.params()`.
pub fn grad_check<F>(net: &mut DenseNet, loss: F, eps: f64) -> GradCheckReport
where
    F: Fn(&DenseNet) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(net);
    assert_eq!(analytic.len(), net.num_params(), "gradient length mismatch");
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for i in 0..net.num_params() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + eps;
        let (lp, _) = loss(net);
        net.params_mut()[i] = orig - eps;
        let (lm, _) = loss(net);
        net.params_mut()[i] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        let denom = analytic[i].abs() + numeric.abs();
        let rel = if denom < 1e-10 {
            (analytic[i] - numeric).abs()
        } else {
            (analytic[i] - numeric).abs() / denom
        };
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        worst_param: worst,
        params_checked: net.num_params(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mse_loss(net: &DenseNet, data: &[(Vec<f64>, Vec<f64>)]) -> (f64, Vec<f64>) {
        let mut grads = vec![0.0; net.num_params()];
        let mut loss = 0.0;
        for (x, y) in data {
            let (out, cache) = net.forward(x);
            let mut dy = vec![0.0; out.len()];
            for i in 0..out.len() {
                let e = out[i] - y[i];
                loss += e * e;
                dy[i] = 2.0 * e;
            }
            let (g, _) = net.backward(&cache, &dy);
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let n = data.len() as f64;
        grads.iter_mut().for_each(|g| *g /= n);
        (loss / n, grads)
    }

    #[test]
    fn single_linear_layer_closed_form() {
        // gradient of |Wx - y|^2 w.r.t. W is 2(Wx - y) x^T
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 2], &mut rng).unwrap();
        let x = vec![0.9, -0.1, 0.3];
        let y = vec![0.2, -0.4];
        let (out, cache) = net.forward(&x);
        let dy: Vec<f64> = out.iter().zip(&y).map(|(o, t)| 2.0 * (o - t)).collect();
        let (grads, _) = net.backward(&cache, &dy);
        for o in 0..2 {
            let e = out[o] - y[o];
            for i in 0..3 {
                let expect = 2.0 * e * x[i];
                assert!((grads[o * 3 + i] - expect).abs() < 1e-12);
            }
            // bias gradient is 2e
            assert!((grads[6 + o] - 2.0 * e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::new(&[4, 8, 3], &mut rng).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3, 0.4]);
        let (grads, dx) = net.backward(&cache, &[0.0, 0.0, 0.0]);
        assert!(grads.iter().all(|&g| g == 0.0));
        assert!(dx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn finite_difference_check_20_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = DenseNet::new(&[4, 6, 5, 2], &mut rng).unwrap();
            let data: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
                .map(|_| {
                    (
                        (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    )
                })
                .collect();
            let report = grad_check(&mut net, |n| mse_loss(n, &data), 1e-5);
            assert!(
                report.passes(1e-4),
                "seed {seed}: max rel err {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::new(&[3, 8, 2], &mut rng).unwrap();
        let x = vec![0.3, -0.7, 0.2];
        let loss = |input: &[f64]| {
            let out = net.output(input);
            out.iter().map(|v| v * v).sum::<f64>()
        };
        let (out, cache) = net.forward(&x);
        let dy: Vec<f64> = out.iter().map(|v| 2.0 * v).collect();
        let (_, dx) = net.backward(&cache, &dy);
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let numeric = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!((dx[i] - numeric).abs() / (dx[i].abs() + numeric.abs() + 1e-12) < 1e-5);
        }
    }

    #[test]
    fn linear_regression_smoke() {
        // 2-layer net fits y = Ax + b on 100 points to MSE < 1e-3 in 2000 steps
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = [[0.5, -1.2], [0.8, 0.3]];
        let b = [0.1, -0.4];
        let data: Vec<(Vec<f64>, Vec<f64>)> = (0..100)
            .map(|_| {
                let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let y = vec![
                    a[0][0] * x[0] + a[0][1] * x[1] + b[0],
                    a[1][0] * x[0] + a[1][1] * x[1] + b[1],
                ];
                (x, y)
            })
            .collect();
        let mut net = DenseNet::new(&[2, 16, 2], &mut rng).unwrap();
        let mut opt = Adam::new(net.num_params(), AdamConfig::with_lr(1e-2));
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            let (loss, grads) = mse_loss(&net, &data);
            let mut p = net.params().to_vec();
            opt.step(&mut p, &grads);
            net.params_mut().copy_from_slice(&p);
            last = loss;
        }
        assert!(last < 1e-3, "final mse {last}");
    }

    #[test]
    fn serialization_roundtrip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[5, 7, 4], &mut rng).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: DenseNet = serde_json::from_str(&json).unwrap();
        assert_eq!(net.params().len(), back.params().len());
        for (a, b) in net.params().iter().zip(back.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(net.dims(), back.dims());
    }

    #[test]
    fn time_embedding_dims() {
        let te = TimeEmbedding::new(8);
        assert_eq!(te.dim(), 16);
        assert_eq!(te.features(0.37).len(), 16);
        let f0 = te.features(0.0);
        for i in 0..8 {
            assert_eq!(f0[2 * i], 0.0);
            assert_eq!(f0[2 * i + 1], 1.0);
        }
    }
}
