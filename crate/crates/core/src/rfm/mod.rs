//! Flow matching on the unit sphere.
//!
//! A conditional vector field `v(y, t, psi)` is regressed onto geodesic
//! velocities between base-distribution noise and data points. Sampling
//! integrates the learned field from uniform noise at t = 0 to a location at
//! t = 1; log-likelihoods come from reverse-time integration of the same
//! field with a divergence term. The conditioning vector psi is produced by
//! [`fuse`], a deterministic linear stand-in for an upstream reasoning
//! model: any fixed-width embedding can be dropped in unchanged.

mod ode;

pub use ode::{heatmap, log_likelihood, sample, sample_from, uniform_log_density, HeatCell, HeatmapGrid};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Provenance;
use crate::net::{Adam, AdamConfig, DenseNet, ForwardCache, TimeEmbedding};
use crate::parallel;
use crate::sphere::{
    geodesic_distance, geodesic_interpolate, project_tangent, sample_uniform, TangentVec, UnitVec,
    ANTIPODAL_TOL,
};
use crate::vec3;

/// Default integration steps for sampling.
pub const DEFAULT_SAMPLE_STEPS: usize = 100;
/// Default integration steps for log-likelihood.
pub const DEFAULT_LIKELIHOOD_STEPS: usize = 64;

/// Conditional vector field on the sphere, parameterized by a dense network
/// over `[y, time features, psi]`. Raw network output is projected onto the
/// tangent plane at `y` before any use.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    net: DenseNet,
    time: TimeEmbedding,
    psi_dim: usize,
    pub sample_steps: usize,
    pub likelihood_steps: usize,
}

impl FlowModel {
    /// Network over `[3 + 2*time_frequencies + psi_dim]` inputs with the
    /// given hidden widths and a 3-wide linear output.
    pub fn new<R: Rng + ?Sized>(
        psi_dim: usize,
        hidden: &[usize],
        time_frequencies: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::invalid("flow model needs at least one hidden layer"));
        }
        let time = TimeEmbedding::new(time_frequencies);
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(3 + time.dim() + psi_dim);
        dims.extend_from_slice(hidden);
        dims.push(3);
        Ok(FlowModel {
            net: DenseNet::new(&dims, rng)?,
            time,
            psi_dim,
            sample_steps: DEFAULT_SAMPLE_STEPS,
            likelihood_steps: DEFAULT_LIKELIHOOD_STEPS,
        })
    }

    /// 4-layer, 256-wide network with 8 time frequencies.
    pub fn with_default_architecture<R: Rng + ?Sized>(psi_dim: usize, rng: &mut R) -> Result<Self> {
        FlowModel::new(psi_dim, &[256, 256, 256], 8, rng)
    }

    pub fn psi_dim(&self) -> usize {
        self.psi_dim
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    fn input(&self, y: &UnitVec, t: f64, psi: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(3 + self.time.dim() + self.psi_dim);
        input.extend_from_slice(y.as_array());
        self.time.write_features(t, &mut input);
        input.extend_from_slice(psi);
        input
    }

    fn check_psi(&self, psi: &[f64]) -> Result<()> {
        if psi.len() != self.psi_dim {
            return Err(Error::invalid(format!(
                "psi has dimension {}, model expects {}",
                psi.len(),
                self.psi_dim
            )));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("psi has non-finite entries"));
        }
        Ok(())
    }

    /// The field at `(y, t, psi)`: network output projected to the tangent
    /// plane at `y`.
    pub fn velocity(&self, y: &UnitVec, t: f64, psi: &[f64]) -> Result<TangentVec> {
        self.check_psi(psi)?;
        let out = self.net.output(&self.input(y, t, psi));
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite field output at time {t}"
            )));
        }
        Ok(project_tangent(y, [out[0], out[1], out[2]]))
    }

    fn velocity_with_cache(&self, y: &UnitVec, t: f64, psi: &[f64]) -> (TangentVec, ForwardCache) {
        let (out, cache) = self.net.forward(&self.input(y, t, psi));
        (project_tangent(y, [out[0], out[1], out[2]]), cache)
    }

    pub fn to_checkpoint(&self, meta: Provenance) -> FlowCheckpoint {
        FlowCheckpoint {
            meta,
            psi_dim: self.psi_dim,
            time_frequencies: self.time.num_frequencies(),
            sample_steps: self.sample_steps,
            likelihood_steps: self.likelihood_steps,
            net: self.net.clone(),
        }
    }
}

/// JSON container for a flow model: dims, integration defaults, parameters,
/// and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowCheckpoint {
    pub meta: Provenance,
    pub psi_dim: usize,
    pub time_frequencies: usize,
    pub sample_steps: usize,
    pub likelihood_steps: usize,
    pub net: DenseNet,
}

impl FlowCheckpoint {
    pub fn into_model(self) -> Result<FlowModel> {
        let time = TimeEmbedding::new(self.time_frequencies);
        if self.net.input_dim() != 3 + time.dim() + self.psi_dim || self.net.output_dim() != 3 {
            return Err(Error::Format("flow checkpoint dims are inconsistent".into()));
        }
        if self.sample_steps == 0 || self.likelihood_steps == 0 {
            return Err(Error::Format("integration steps must be positive".into()));
        }
        Ok(FlowModel {
            net: self.net,
            time,
            psi_dim: self.psi_dim,
            sample_steps: self.sample_steps,
            likelihood_steps: self.likelihood_steps,
        })
    }
}

/// Fixed-width conditioning vector for the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningVec(pub Vec<f64>);

impl ConditioningVec {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Inputs to [`fuse`]: per-frame visual embeddings and the sparse atom
/// activation vector from the decomposition stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    pub visual_frames: Vec<Vec<f64>>,
    pub atom_activation: Vec<f64>,
}

/// Linear projection from `[mean(visual) || atoms]` to the conditioning
/// space. Weights are seeded once and then fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionProjection {
    visual_dim: usize,
    atom_dim: usize,
    out_dim: usize,
    /// out_dim x (visual_dim + atom_dim), row-major
    weights: Vec<f64>,
}

impl FusionProjection {
    pub fn seeded<R: Rng + ?Sized>(
        visual_dim: usize,
        atom_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if visual_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("fusion dims must be positive"));
        }
        let in_dim = visual_dim + atom_dim;
        let std = (1.0 / in_dim as f64).sqrt();
        let weights = (0..out_dim * in_dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                g * std
            })
            .collect();
        Ok(FusionProjection {
            visual_dim,
            atom_dim,
            out_dim,
            weights,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

/// Temporal-average the visual frames, concatenate the atom activations, and
/// project: `psi = W [mean(h_t) || z]`.
pub fn fuse(input: &FusionInput, proj: &FusionProjection) -> Result<ConditioningVec> {
    if input.visual_frames.is_empty() {
        return Err(Error::invalid("fusion needs at least one visual frame"));
    }
    if input.visual_frames.iter().any(|f| f.len() != proj.visual_dim) {
        return Err(Error::invalid(format!(
            "visual frames must all have dimension {}",
            proj.visual_dim
        )));
    }
    if input.atom_activation.len() != proj.atom_dim {
        return Err(Error::invalid(format!(
            "atom vector has dimension {}, projection expects {}",
            input.atom_activation.len(),
            proj.atom_dim
        )));
    }
    if input.atom_activation.iter().any(|&z| !z.is_finite() || z < 0.0) {
        return Err(Error::invalid("atom activations must be finite and >= 0"));
    }
    if input.visual_frames.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("visual frames have non-finite entries"));
    }
    let t = input.visual_frames.len() as f64;
    let mut concat = vec![0.0; proj.visual_dim + proj.atom_dim];
    for frame in &input.visual_frames {
        for (m, v) in concat.iter_mut().zip(frame) {
            *m += v;
        }
    }
    concat[..proj.visual_dim].iter_mut().for_each(|m| *m /= t);
    concat[proj.visual_dim..].copy_from_slice(&input.atom_activation);
    let in_dim = proj.visual_dim + proj.atom_dim;
    let psi = (0..proj.out_dim)
        .map(|o| {
            let row = &proj.weights[o * in_dim..(o + 1) * in_dim];
            row.iter().zip(&concat).map(|(w, x)| w * x).sum()
        })
        .collect();
    Ok(ConditioningVec(psi))
}

/// Flow-matching loss and gradients for one explicit draw `(y0, t)`:
/// squared norm of (projected field output - geodesic velocity) at the
/// interpolated point. Antipodal `(y0, y1)` is an error here; the batch
/// path resamples instead.
pub fn rfm_loss_at(
    model: &FlowModel,
    y1: &UnitVec,
    psi: &[f64],
    y0: &UnitVec,
    t: f64,
) -> Result<(f64, Vec<f64>)> {
    model.check_psi(psi)?;
    let (y_t, y_dot) = geodesic_interpolate(y0, y1, t)?;
    let (pred, cache) = model.velocity_with_cache(&y_t, t, psi);
    let err = vec3::sub(pred.components(), y_dot.components());
    let loss = vec3::dot(&err, &err);
    // d|P v - w|^2 / dv = 2 P (P v - w) = 2 err, since err is tangent at y_t
    let dout = vec3::scale(&err, 2.0);
    let (grads, _) = model.net.backward(&cache, &dout);
    Ok((loss, grads))
}

/// Mean flow-matching loss and gradients over a batch. Per sample, draws
/// t ~ U(0,1) and y0 from the uniform base distribution (resampling the
/// probability-zero antipodal pairs), then evaluates [`rfm_loss_at`].
pub fn rfm_loss<R: Rng + ?Sized>(
    model: &FlowModel,
    batch: &[(UnitVec, Vec<f64>)],
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty flow-matching batch"));
    }
    let draws: Vec<(UnitVec, f64)> = batch
        .iter()
        .map(|(y1, _)| {
            let y0 = loop {
                let cand = sample_uniform(rng);
                if std::f64::consts::PI - geodesic_distance(&cand, y1) >= ANTIPODAL_TOL {
                    break cand;
                }
            };
            (y0, rng.random::<f64>())
        })
        .collect();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let per_sample = parallel::map(&idx, |&i| {
        let (y1, psi) = &batch[i];
        let (y0, t) = &draws[i];
        rfm_loss_at(model, y1, psi, y0, *t)
    });
    let mut loss = 0.0;
    let mut grads = vec![0.0; model.net.num_params()];
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grads.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grads))
}

#[derive(Debug, Clone, Copy)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        FlowTrainConfig {
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowTrainReport {
    pub batch_losses: Vec<f64>,
}

impl FlowTrainReport {
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        self.batch_losses
            .chunks_exact(window)
            .map(|c| c.iter().sum::<f64>() / window as f64)
            .collect()
    }
}

/// Adam training of the field on `(location, psi)` pairs.
pub fn train_flow<R: Rng + ?Sized>(
    model: &mut FlowModel,
    data: &[(UnitVec, Vec<f64>)],
    cfg: FlowTrainConfig,
    rng: &mut R,
) -> Result<FlowTrainReport> {
    if data.is_empty() {
        return Err(Error::invalid("empty flow training set"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch size must be positive"));
    }
    for (_, psi) in data {
        model.check_psi(psi)?;
    }
    let mut opt = Adam::new(model.net.num_params(), AdamConfig::with_lr(cfg.lr));
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut batch_losses = Vec::new();
    for _ in 0..cfg.epochs {
        for i in (1..indices.len()).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        for chunk in indices.chunks(cfg.batch_size) {
            let batch: Vec<(UnitVec, Vec<f64>)> =
                chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grads) = rfm_loss(model, &batch, rng)?;
            opt.step(model.net.params_mut(), &grads);
            batch_losses.push(loss);
        }
    }
    Ok(FlowTrainReport { batch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fuse_mean_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let proj = FusionProjection::seeded(4, 3, 5, &mut rng).unwrap();
        let frames: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        // elementwise arithmetic-mean oracle
        let mut mean = vec![0.0; 4];
        for f in &frames {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / 7.0;
            }
        }
        let z = vec![0.5, 0.0, 1.25];
        let psi = fuse(
            &FusionInput {
                visual_frames: frames.clone(),
                atom_activation: z.clone(),
            },
            &proj,
        )
        .unwrap();
        // recompute through the projection with the oracle mean
        let mut concat = mean.clone();
        concat.extend_from_slice(&z);
        for o in 0..5 {
            let row = &proj.weights[o * 7..(o + 1) * 7];
            let want: f64 = row.iter().zip(&concat).map(|(w, x)| w * x).sum();
            assert!((psi.0[o] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_identical_frames_and_zero_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let proj = FusionProjection::seeded(3, 2, 4, &mut rng).unwrap();
        let frame = vec![0.25, -0.5, 1.0];
        let many = FusionInput {
            visual_frames: vec![frame.clone(); 9],
            atom_activation: vec![0.0, 0.0],
        };
        let one = FusionInput {
            visual_frames: vec![frame],
            atom_activation: vec![0.0, 0.0],
        };
        let a = fuse(&many, &proj).unwrap();
        let b = fuse(&one, &proj).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() < 1e-12);
        }
        // with zero atoms, psi is independent of the atom block
        let with_atoms = FusionInput {
            visual_frames: one.visual_frames.clone(),
            atom_activation: vec![1.0, 2.0],
        };
        let c = fuse(&with_atoms, &proj).unwrap();
        assert!(a.0.iter().zip(&c.0).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn fuse_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let proj = FusionProjection::seeded(3, 2, 4, &mut rng).unwrap();
        assert!(fuse(
            &FusionInput {
                visual_frames: vec![],
                atom_activation: vec![0.0, 0.0]
            },
            &proj
        )
        .is_err());
        assert!(fuse(
            &FusionInput {
                visual_frames: vec![vec![0.0; 3]],
                atom_activation: vec![-0.5, 0.0]
            },
            &proj
        )
        .is_err());
    }

    #[test]
    fn perfect_field_has_zero_loss() {
        // single-layer model whose constant output equals the geodesic
        // velocity of one fixed draw
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y0 = sample_uniform(&mut rng);
        let y1 = sample_uniform(&mut rng);
        let t = 0.37;
        let (_, y_dot) = geodesic_interpolate(&y0, &y1, t).unwrap();

        let mut model = FlowModel::new(0, &[4], 2, &mut rng).unwrap();
        model.net_mut().zero_params();
        let n = model.net().num_params();
        let v = *y_dot.components();
        // output bias is the last 3 parameters of the final layer
        model.net_mut().params_mut()[n - 3..].copy_from_slice(&v);

        let (loss, grads) = rfm_loss_at(&model, &y1, &[], &y0, t).unwrap();
        assert!(loss < 1e-24, "loss {loss}");
        assert!(grads.iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn zero_field_loss_matches_monte_carlo_distance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = FlowModel::new(2, &[8], 4, &mut rng).unwrap();
        model.net_mut().zero_params();

        let batch: Vec<(UnitVec, Vec<f64>)> = (0..4000)
            .map(|_| (sample_uniform(&mut rng), vec![0.0, 0.0]))
            .collect();
        let (loss, _) = rfm_loss(&model, &batch, &mut rng).unwrap();

        // independent Monte-Carlo estimate of E[d(y0, y1)^2]
        let mut oracle_rng = ChaCha8Rng::seed_from_u64(1234);
        let mut acc = 0.0;
        let m = 200_000;
        for _ in 0..m {
            let a = sample_uniform(&mut oracle_rng);
            let b = sample_uniform(&mut oracle_rng);
            let d = geodesic_distance(&a, &b);
            acc += d * d;
        }
        let oracle = acc / m as f64;
        // closed form is (pi^2 - 4) / 2
        assert!((oracle - (std::f64::consts::PI.powi(2) - 4.0) / 2.0).abs() < 0.02);
        assert!(
            (loss - oracle).abs() / oracle < 0.02,
            "loss {loss} vs oracle {oracle}"
        );
    }

    #[test]
    fn zero_field_loss_rotation_invariant() {
        // with the zero network the per-draw loss is d(y0, y1)^2, which a
        // common rotation preserves exactly
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rot = |p: &UnitVec| {
            // rotate 90 degrees about z
            UnitVec::new(-p.y(), p.x(), p.z()).unwrap()
        };
        let mut model = FlowModel::new(0, &[4], 2, &mut rng).unwrap();
        model.net_mut().zero_params();
        for _ in 0..100 {
            let y0 = sample_uniform(&mut rng);
            let y1 = sample_uniform(&mut rng);
            if std::f64::consts::PI - geodesic_distance(&y0, &y1) < 1e-6 {
                continue;
            }
            let t = rng.random_range(0.0..1.0);
            let (l1, _) = rfm_loss_at(&model, &y1, &[], &y0, t).unwrap();
            let (l2, _) = rfm_loss_at(&model, &rot(&y1), &[], &rot(&y0), t).unwrap();
            assert!((l1 - l2).abs() < 1e-12 * (1.0 + l1));
        }
    }

    #[test]
    fn rfm_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = FlowModel::new(2, &[6], 3, &mut rng).unwrap();
        let y1 = sample_uniform(&mut rng);
        let y0 = sample_uniform(&mut rng);
        let psi = vec![0.3, -0.8];
        let t = 0.42;
        let (_, analytic) = rfm_loss_at(&model, &y1, &psi, &y0, t).unwrap();
        let eps = 1e-6;
        let mut max_rel = 0.0f64;
        for i in 0..model.net().num_params() {
            let orig = model.net().params()[i];
            model.net_mut().params_mut()[i] = orig + eps;
            let (lp, _) = rfm_loss_at(&model, &y1, &psi, &y0, t).unwrap();
            model.net_mut().params_mut()[i] = orig - eps;
            let (lm, _) = rfm_loss_at(&model, &y1, &psi, &y0, t).unwrap();
            model.net_mut().params_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let denom = analytic[i].abs() + numeric.abs();
            if denom > 1e-10 {
                max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
            }
        }
        assert!(max_rel < 1e-4, "max rel err {max_rel}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = FlowModel::new(3, &[8, 8], 4, &mut rng).unwrap();
        let meta = Provenance {
            tool_version: "t".into(),
            config_hash: "h".into(),
            seed: 7,
        };
        let json = serde_json::to_string(&model.to_checkpoint(meta)).unwrap();
        let back: FlowCheckpoint = serde_json::from_str(&json).unwrap();
        let model2 = back.into_model().unwrap();
        assert_eq!(model, model2);
    }
}
