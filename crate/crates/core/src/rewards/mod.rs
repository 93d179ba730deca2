//! Reward stack for grouped policy rollouts: hierarchical cell agreement,
//! entity-polygon consistency, likelihood calibration, and group-relative
//! advantage normalization.
//!
//! The policy update itself is out of scope; this module scores rollouts and
//! standardizes rewards within a group so an external trainer can consume
//! them. The KL coefficient is carried in the config for that consumer.

mod gazetteer;

pub use gazetteer::{parse_entities, EntityGazetteer, SphericalPolygon};

use serde::{Deserialize, Serialize};

use crate::cells::{cell_at, CellLevelWeights};
use crate::error::{Error, Result};
use crate::rfm::{log_likelihood, FlowModel};
use crate::sphere::UnitVec;

/// Reward configuration: cell levels/weights, combination coefficients, the
/// KL penalty coefficient, and the rollout group size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub cell_weights: CellLevelWeights,
    pub combine: CombineWeights,
    pub kl_beta: f64,
    pub group_size: usize,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::invalid("group size must be at least 2"));
        }
        if !self.kl_beta.is_finite() || self.kl_beta < 0.0 {
            return Err(Error::invalid("kl coefficient must be finite and >= 0"));
        }
        Ok(())
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            cell_weights: CellLevelWeights::default(),
            combine: CombineWeights::default(),
            kl_beta: 0.01,
            group_size: 8,
        }
    }
}

/// Linear combination coefficients for the total reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombineWeights {
    pub geo: f64,
    pub align: f64,
    pub calib: f64,
}

impl Default for CombineWeights {
    fn default() -> Self {
        CombineWeights {
            geo: 1.0,
            align: 1.0,
            calib: 0.1,
        }
    }
}

/// The three reward components of one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub geo: f64,
    pub align: f64,
    pub calib: f64,
}

/// Weighted sum of cell-equality indicators at the configured levels.
/// In [0, 1]; nesting makes the value one of the partial weight sums.
pub fn r_geo(prediction: &UnitVec, truth: &UnitVec, weights: &CellLevelWeights) -> f64 {
    weights
        .entries()
        .iter()
        .map(|&(level, w)| {
            let same = cell_at(prediction, level)
                .and_then(|a| Ok(a == cell_at(truth, level)?))
                .unwrap_or(false);
            if same {
                w
            } else {
                0.0
            }
        })
        .sum()
}

/// 1.0 if the prediction lies inside any of the named entity polygons,
/// else 0.0. Unknown names contribute nothing; an empty entity list scores
/// 0 (the max over an empty set — ungrounded reasoning earns nothing).
pub fn r_align(entities: &[String], prediction: &UnitVec, gazetteer: &EntityGazetteer) -> f64 {
    let inside = entities
        .iter()
        .filter_map(|name| gazetteer.get(name))
        .any(|poly| poly.contains(prediction));
    if inside {
        1.0
    } else {
        0.0
    }
}

/// Log-likelihood of the truth under the flow's predicted distribution.
pub fn r_calib(flow: &FlowModel, truth: &UnitVec, psi: &[f64], steps: usize) -> Result<f64> {
    log_likelihood(flow, truth, psi, steps)
}

/// Configurable linear combination of the components.
pub fn total_reward(components: &RewardComponents, weights: &CombineWeights) -> f64 {
    weights.geo * components.geo + weights.align * components.align + weights.calib * components.calib
}

/// Group-relative advantages: (r - mean) / (std + 1e-8) with the population
/// standard deviation. A constant group maps to all zeros.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    // zero-variance guard: a constant group standardizes to exact zeros
    if rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// One scored rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub prediction: UnitVec,
    pub text: String,
    pub components: RewardComponents,
    pub total: f64,
}

/// A group of rollouts scored together; advantages are standardized within
/// the group.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn advantages(&self) -> Vec<f64> {
        let totals: Vec<f64> = self.rollouts.iter().map(|r| r.total).collect();
        group_advantages(&totals)
    }
}

/// JSONL rollout record: input fields plus the annotations added by scoring.
/// Coordinates are degrees, (lat, lon) order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub pred_lat: f64,
    pub pred_lon: f64,
    pub truth_lat: f64,
    pub truth_lon: f64,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_geo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_align: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_calib: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
}

/// Score one rollout record: parse entities from its text, evaluate the
/// three components (calibration only when a flow model and psi are given),
/// and fill in the annotation fields. The advantage is left for the group
/// pass.
pub fn score_rollout(
    record: &RolloutRecord,
    config: &RewardConfig,
    gazetteer: &EntityGazetteer,
    flow: Option<(&FlowModel, usize)>,
) -> Result<RolloutRecord> {
    let pred = crate::sphere::GeoPoint::new(record.pred_lat, record.pred_lon)?.to_unit();
    let truth = crate::sphere::GeoPoint::new(record.truth_lat, record.truth_lon)?.to_unit();
    let entities = parse_entities(&record.text, gazetteer);
    let geo = r_geo(&pred, &truth, &config.cell_weights);
    let align = r_align(&entities, &pred, gazetteer);
    let calib = match (flow, &record.psi) {
        (Some((model, steps)), Some(psi)) => r_calib(model, &truth, psi, steps)?,
        _ => 0.0,
    };
    let components = RewardComponents { geo, align, calib };
    let mut out = record.clone();
    out.r_geo = Some(geo);
    out.r_align = Some(align);
    out.r_calib = Some(calib);
    out.total = Some(total_reward(&components, &config.combine));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{sample_uniform, GeoPoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rect_polygon(lat0: f64, lat1: f64, lon0: f64, lon1: f64) -> SphericalPolygon {
        SphericalPolygon::from_rings(vec![vec![
            GeoPoint::new(lat0, lon0).unwrap(),
            GeoPoint::new(lat0, lon1).unwrap(),
            GeoPoint::new(lat1, lon1).unwrap(),
            GeoPoint::new(lat1, lon0).unwrap(),
            GeoPoint::new(lat0, lon0).unwrap(),
        ]])
        .unwrap()
    }

    #[test]
    fn r_geo_equal_and_antipodal() {
        let w = CellLevelWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = sample_uniform(&mut rng);
            assert_eq!(r_geo(&p, &p, &w), 0.2 + 0.3 + 0.5);
            assert_eq!(r_geo(&p, &p.antipode(), &w), 0.0);
        }
    }

    #[test]
    fn r_geo_matches_brute_force_cell_comparison() {
        let w = CellLevelWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let a = sample_uniform(&mut rng);
            // mix of nearby and far pairs
            let b = if rng.random::<bool>() {
                let dir = crate::sphere::project_tangent(
                    &a,
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ],
                );
                if dir.norm() < 1e-9 {
                    continue;
                }
                let ang = rng.random_range(1e-5..0.2);
                dir.scale(ang / dir.norm()).exp()
            } else {
                sample_uniform(&mut rng)
            };
            let mut expect = 0.0;
            for &(level, weight) in w.entries() {
                if cell_at(&a, level).unwrap() == cell_at(&b, level).unwrap() {
                    expect += weight;
                }
            }
            assert_eq!(r_geo(&a, &b, &w), expect);
        }
    }

    #[test]
    fn r_geo_symmetric_and_nested() {
        let w = CellLevelWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let a = sample_uniform(&mut rng);
            let dir = crate::sphere::project_tangent(
                &a,
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ],
            );
            if dir.norm() < 1e-9 {
                continue;
            }
            let ang = rng.random_range(1e-6..0.5);
            let b = dir.scale(ang / dir.norm()).exp();
            let r = r_geo(&a, &b, &w);
            assert_eq!(r, r_geo(&b, &a, &w));
            // nesting: the reward is one of the cumulative weight sums
            let valid = [0.0, 0.2, 0.2 + 0.3, 1.0];
            assert!(
                valid.iter().any(|v| (r - v).abs() < 1e-12),
                "unexpected r_geo {r}"
            );
        }
    }

    #[test]
    fn r_align_containment_and_counterexample() {
        let mut gaz = EntityGazetteer::new();
        gaz.insert("testland", rect_polygon(10.0, 20.0, 10.0, 20.0))
            .unwrap();
        // simplified northern/southern neighbours
        gaz.insert("canada", rect_polygon(50.0, 70.0, -130.0, -60.0))
            .unwrap();
        gaz.insert("usa", rect_polygon(26.0, 49.0, -124.0, -67.0))
            .unwrap();

        let inside_testland = GeoPoint::new(15.0, 15.0).unwrap().to_unit();
        assert_eq!(
            r_align(&["testland".into()], &inside_testland, &gaz),
            1.0
        );

        // reasoning about canada while predicting a point in the usa
        let kansas = GeoPoint::new(39.0, -98.0).unwrap().to_unit();
        assert_eq!(r_align(&["canada".into()], &kansas, &gaz), 0.0);
        assert_eq!(r_align(&["usa".into()], &kansas, &gaz), 1.0);

        // empty entity list earns nothing
        assert_eq!(r_align(&[], &kansas, &gaz), 0.0);
        // unknown names are ignored
        assert_eq!(r_align(&["atlantis".into()], &kansas, &gaz), 0.0);
        // order and duplication do not matter
        let lists: [&[String]; 2] = [
            &["canada".into(), "usa".into(), "usa".into()],
            &["usa".into(), "canada".into()],
        ];
        for list in lists {
            assert_eq!(r_align(list, &kansas, &gaz), 1.0);
        }
    }

    #[test]
    fn group_advantages_reference_cases() {
        // constant group -> zeros
        let adv = group_advantages(&[0.7; 8]);
        assert!(adv.iter().all(|&a| a == 0.0));

        // two-point standardization
        let adv = group_advantages(&[0.0, 1.0]);
        assert!((adv[0] + 1.0).abs() < 1e-7);
        assert!((adv[1] - 1.0).abs() < 1e-7);

        // oracle recomputation on a G=8 vector
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rewards: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let adv = group_advantages(&rewards);
        let mean = rewards.iter().sum::<f64>() / 8.0;
        let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 8.0).sqrt();
        for (a, r) in adv.iter().zip(&rewards) {
            assert!((a - (r - mean) / (std + 1e-8)).abs() < 1e-12);
        }
        // standardized moments
        assert!(adv.iter().sum::<f64>().abs() < 1e-12);
        let v = adv.iter().map(|a| a * a).sum::<f64>() / 8.0;
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn group_advantages_shift_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rewards: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = group_advantages(&rewards);
        let shifted: Vec<f64> = rewards.iter().map(|r| r + 3.7).collect();
        for (a, b) in base.iter().zip(group_advantages(&shifted)) {
            assert!((a - b).abs() < 1e-9);
        }
        let scaled: Vec<f64> = rewards.iter().map(|r| r * 4.0).collect();
        for (a, b) in base.iter().zip(group_advantages(&scaled)) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn total_reward_composition() {
        let comps = RewardComponents {
            geo: 1.0,
            align: 1.0,
            calib: -2.5,
        };
        let w = CombineWeights::default();
        assert!((total_reward(&comps, &w) - (1.0 + 1.0 + 0.1 * -2.5)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = RewardConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.group_size = 1;
        assert!(cfg.validate().is_err());
        cfg.group_size = 8;
        cfg.kl_beta = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn score_rollout_fills_components() {
        let mut gaz = EntityGazetteer::new();
        gaz.insert("testland", rect_polygon(10.0, 20.0, 10.0, 20.0))
            .unwrap();
        let cfg = RewardConfig::default();
        let rec = RolloutRecord {
            pred_lat: 15.0,
            pred_lon: 15.0,
            truth_lat: 15.0,
            truth_lon: 15.0,
            text: "sounds like testland".into(),
            psi: None,
            r_geo: None,
            r_align: None,
            r_calib: None,
            total: None,
            advantage: None,
        };
        let scored = score_rollout(&rec, &cfg, &gaz, None).unwrap();
        assert_eq!(scored.r_geo, Some(1.0));
        assert_eq!(scored.r_align, Some(1.0));
        assert_eq!(scored.r_calib, Some(0.0));
        assert_eq!(scored.total, Some(2.0));
    }
}
