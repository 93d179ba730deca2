//! Synthetic mixture factory.
//!
//! Stands in for a real audio encoder at desk scale: every "clip" is already
//! an embedding vector, and mixing is linear, so the embedding of a mixture
//! is the gain-weighted sum of its component embeddings. Class prototypes
//! are drawn as an orthonormal frame and clips perturb their prototype, so
//! same-class clips are far more similar than cross-class ones. A real
//! encoder can replace this by supplying `ClipEmbedding`s from elsewhere.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An embedding vector tagged with its sound class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEmbedding {
    pub class_id: usize,
    pub vec: Vec<f64>,
}

/// Per-class prototypes plus perturbed clips.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipBank {
    dim: usize,
    prototypes: Vec<Vec<f64>>,
    clips: Vec<Vec<Vec<f64>>>,
}

impl ClipBank {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn clips_per_class(&self) -> usize {
        self.clips.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    pub fn clip(&self, class: usize, idx: usize) -> &[f64] {
        &self.clips[class][idx]
    }

    pub fn records(&self) -> impl Iterator<Item = BankRecord> + '_ {
        (0..self.num_classes()).map(|c| BankRecord {
            class_id: c,
            prototype: self.prototypes[c].clone(),
            clips: self.clips[c].clone(),
        })
    }

    pub fn from_records(records: Vec<BankRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Format("empty clip bank".into()));
        }
        let dim = records[0].prototype.len();
        let mut prototypes = vec![Vec::new(); records.len()];
        let mut clips = vec![Vec::new(); records.len()];
        for rec in records {
            if rec.class_id >= prototypes.len() {
                return Err(Error::Format(format!("class id {} out of range", rec.class_id)));
            }
            if rec.prototype.len() != dim || rec.clips.iter().any(|c| c.len() != dim) {
                return Err(Error::Format("inconsistent clip dimensions".into()));
            }
            prototypes[rec.class_id] = rec.prototype;
            clips[rec.class_id] = rec.clips;
        }
        if prototypes.iter().any(|p| p.is_empty()) {
            return Err(Error::Format("missing class records".into()));
        }
        Ok(ClipBank {
            dim,
            prototypes,
            clips,
        })
    }
}

/// JSONL row of a clip bank: one record per class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankRecord {
    pub class_id: usize,
    pub prototype: Vec<f64>,
    pub clips: Vec<Vec<f64>>,
}

/// Draw an orthonormal prototype per class (Gram-Schmidt over Gaussian
/// draws; requires `num_classes <= dim`), then `clips_per_class` unit-norm
/// perturbations `normalize(prototype + noise * g)` per class.
pub fn make_clip_bank<R: Rng + ?Sized>(
    num_classes: usize,
    clips_per_class: usize,
    dim: usize,
    noise: f64,
    rng: &mut R,
) -> Result<ClipBank> {
    if num_classes == 0 || clips_per_class == 0 || dim == 0 {
        return Err(Error::invalid("bank dims must be positive"));
    }
    if num_classes > dim {
        return Err(Error::invalid(format!(
            "cannot draw {num_classes} orthonormal prototypes in dimension {dim}"
        )));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::invalid("noise must be finite and >= 0"));
    }
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while prototypes.len() < num_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for p in &prototypes {
            let d = super::dot(&v, p);
            for (vi, pi) in v.iter_mut().zip(p) {
                *vi -= d * pi;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-6 {
            continue; // degenerate draw, retry
        }
        v.iter_mut().for_each(|x| *x /= n);
        prototypes.push(v);
    }
    let clips = prototypes
        .iter()
        .map(|p| {
            (0..clips_per_class)
                .map(|_| {
                    let mut c: Vec<f64> = p
                        .iter()
                        .map(|&x| {
                            let g: f64 = StandardNormal.sample(rng);
                            x + noise * g
                        })
                        .collect();
                    let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                    c.iter_mut().for_each(|x| *x /= n);
                    c
                })
                .collect()
        })
        .collect();
    Ok(ClipBank {
        dim,
        prototypes,
        clips,
    })
}

/// One mixture component: a clip and its energy gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub class_id: usize,
    pub clip: Vec<f64>,
    pub gain: f64,
}

/// A synthetic mixture: components with strictly decreasing gains and the
/// mixed embedding `x_mix = sum_k gain_k * clip_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    components: Vec<MixtureComponent>,
    x_mix: Vec<f64>,
}

impl MixtureSample {
    /// Validates the loudness hierarchy (strictly decreasing gains) and
    /// computes the mixed embedding.
    pub fn from_components(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        let dim = components[0].clip.len();
        for c in &components {
            if c.clip.len() != dim {
                return Err(Error::invalid("component dimensions differ"));
            }
            if !c.gain.is_finite() || c.gain <= 0.0 {
                return Err(Error::invalid(format!("gain {} must be finite and > 0", c.gain)));
            }
            if c.clip.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("clip has non-finite entries"));
            }
        }
        for pair in components.windows(2) {
            if pair[0].gain <= pair[1].gain {
                return Err(Error::invalid(format!(
                    "gains must be strictly decreasing ({} then {})",
                    pair[0].gain, pair[1].gain
                )));
            }
        }
        let mut x_mix = vec![0.0; dim];
        for c in &components {
            for (x, v) in x_mix.iter_mut().zip(&c.clip) {
                *x += c.gain * v;
            }
        }
        Ok(MixtureSample { components, x_mix })
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn x_mix(&self) -> &[f64] {
        &self.x_mix
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn class_sequence(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.class_id).collect()
    }
}

/// Gains are sampled uniformly from this range, then sorted descending.
pub const GAIN_RANGE: (f64, f64) = (0.2, 1.0);

/// Sample a mixture of `k` distinct classes from the bank with strictly
/// decreasing gains.
pub fn make_mixture<R: Rng + ?Sized>(
    bank: &ClipBank,
    k: usize,
    rng: &mut R,
) -> Result<MixtureSample> {
    if k == 0 {
        return Err(Error::invalid("mixture size k must be >= 1"));
    }
    if k > bank.num_classes() {
        return Err(Error::invalid(format!(
            "mixture size {k} exceeds the {} distinct classes",
            bank.num_classes()
        )));
    }
    // partial Fisher-Yates for k distinct classes
    let mut ids: Vec<usize> = (0..bank.num_classes()).collect();
    for i in 0..k {
        let j = rng.random_range(i..ids.len());
        ids.swap(i, j);
    }
    let gains = loop {
        let mut g: Vec<f64> = (0..k)
            .map(|_| rng.random_range(GAIN_RANGE.0..GAIN_RANGE.1))
            .collect();
        g.sort_by(|a, b| b.partial_cmp(a).expect("finite gains"));
        if g.windows(2).all(|w| w[0] > w[1]) {
            break g;
        }
    };
    let components = ids[..k]
        .iter()
        .zip(gains)
        .map(|(&class_id, gain)| {
            let idx = rng.random_range(0..bank.clips_per_class());
            MixtureComponent {
                class_id,
                clip: bank.clip(class_id, idx).to_vec(),
                gain,
            }
        })
        .collect();
    MixtureSample::from_components(components)
}

/// JSONL row of a mixture: class ids, gains, component vectors, mixed vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub classes: Vec<usize>,
    pub gains: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub x_mix: Vec<f64>,
}

impl From<&MixtureSample> for MixtureRecord {
    fn from(m: &MixtureSample) -> Self {
        MixtureRecord {
            classes: m.class_sequence(),
            gains: m.components.iter().map(|c| c.gain).collect(),
            components: m.components.iter().map(|c| c.clip.clone()).collect(),
            x_mix: m.x_mix.clone(),
        }
    }
}

impl TryFrom<MixtureRecord> for MixtureSample {
    type Error = Error;

    fn try_from(rec: MixtureRecord) -> Result<Self> {
        if rec.classes.len() != rec.gains.len() || rec.classes.len() != rec.components.len() {
            return Err(Error::Format("mixture record field lengths differ".into()));
        }
        let components = rec
            .classes
            .into_iter()
            .zip(rec.gains)
            .zip(rec.components)
            .map(|((class_id, gain), clip)| MixtureComponent {
                class_id,
                clip,
                gain,
            })
            .collect();
        let sample = MixtureSample::from_components(components)?;
        // trust but verify the stored mix
        for (a, b) in sample.x_mix.iter().zip(&rec.x_mix) {
            if (a - b).abs() > 1e-9 {
                return Err(Error::Format("stored x_mix disagrees with components".into()));
            }
        }
        Ok(sample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let d = super::super::dot(a, b);
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    }

    #[test]
    fn bank_same_class_more_similar_than_cross() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bank = make_clip_bank(8, 4, 32, 0.1, &mut rng).unwrap();
        let mut min_same = f64::INFINITY;
        let mut max_cross = f64::NEG_INFINITY;
        for c in 0..8 {
            for i in 0..4 {
                for j in (i + 1)..4 {
                    min_same = min_same.min(cosine(bank.clip(c, i), bank.clip(c, j)));
                }
                for c2 in (c + 1)..8 {
                    for j in 0..4 {
                        max_cross = max_cross.max(cosine(bank.clip(c, i), bank.clip(c2, j)));
                    }
                }
            }
        }
        assert!(
            min_same > max_cross,
            "same-class cosine {min_same} vs cross-class {max_cross}"
        );
    }

    #[test]
    fn bank_prototypes_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bank = make_clip_bank(6, 2, 24, 0.05, &mut rng).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let d = super::super::dot(bank.prototype(a), bank.prototype(b));
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bank_rejects_too_many_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(make_clip_bank(10, 2, 8, 0.1, &mut rng).is_err());
    }

    #[test]
    fn single_component_mixture_is_the_clip() {
        let comp = MixtureComponent {
            class_id: 0,
            clip: vec![0.5, -0.5, 0.25],
            gain: 1.0,
        };
        let m = MixtureSample::from_components(vec![comp.clone()]).unwrap();
        assert_eq!(m.x_mix(), comp.clip.as_slice());
    }

    #[test]
    fn two_component_linearity() {
        let c1 = vec![1.0, 0.0];
        let c2 = vec![0.0, 1.0];
        let m = MixtureSample::from_components(vec![
            MixtureComponent {
                class_id: 0,
                clip: c1,
                gain: 0.8,
            },
            MixtureComponent {
                class_id: 1,
                clip: c2,
                gain: 0.4,
            },
        ])
        .unwrap();
        assert_eq!(m.x_mix(), &[0.8, 0.4]);
    }

    #[test]
    fn gains_strictly_decreasing_over_1000_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bank = make_clip_bank(16, 4, 64, 0.1, &mut rng).unwrap();
        for _ in 0..1000 {
            let m = make_mixture(&bank, 3, &mut rng).unwrap();
            let gains: Vec<f64> = m.components().iter().map(|c| c.gain).collect();
            assert!(gains.windows(2).all(|w| w[0] > w[1]), "{gains:?}");
            assert!(gains.iter().all(|&g| (GAIN_RANGE.0..GAIN_RANGE.1).contains(&g)));
            let classes = m.class_sequence();
            let mut dedup = classes.clone();
            dedup.sort_unstable();
            dedup.dedup();
            assert_eq!(dedup.len(), classes.len(), "duplicate classes");
        }
    }

    #[test]
    fn invalid_mixture_requests() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bank = make_clip_bank(4, 2, 16, 0.1, &mut rng).unwrap();
        assert!(make_mixture(&bank, 0, &mut rng).is_err());
        assert!(make_mixture(&bank, 5, &mut rng).is_err());
    }

    #[test]
    fn mixture_record_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bank = make_clip_bank(6, 3, 16, 0.1, &mut rng).unwrap();
        let m = make_mixture(&bank, 3, &mut rng).unwrap();
        let rec = MixtureRecord::from(&m);
        let back = MixtureSample::try_from(rec).unwrap();
        assert_eq!(back, m);
    }
}
