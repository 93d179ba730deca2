//! Integration of the learned field: forward sampling, reverse-time
//! log-likelihood with divergence accumulation, and density heatmaps.
//!
//! The integrator is Heun with projection-retraction: field outputs are
//! projected to the tangent plane, ambient steps are renormalized back onto
//! the sphere, and the corrector velocity is parallel-transported into the
//! predictor's tangent plane before averaging.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::Provenance;
use crate::parallel;
use crate::sphere::{parallel_transport, sample_uniform, UnitVec};
use crate::vec3;

use super::FlowModel;

/// Central-difference step for the tangent-basis divergence.
const DIVERGENCE_EPS: f64 = 1e-4;

/// log density of the uniform base distribution on the unit sphere.
pub fn uniform_log_density() -> f64 {
    -(4.0 * std::f64::consts::PI).ln()
}

/// Orthonormal tangent basis at `y`, chosen deterministically.
fn tangent_basis(y: &UnitVec) -> ([f64; 3], [f64; 3]) {
    let a = y.as_array();
    // axis with the smallest |component| is safely non-parallel
    let mut axis = [0.0; 3];
    let mut min_i = 0;
    for i in 1..3 {
        if a[i].abs() < a[min_i].abs() {
            min_i = i;
        }
    }
    axis[min_i] = 1.0;
    let c = vec3::cross(a, &axis);
    let n = vec3::norm(&c);
    let e1 = vec3::scale(&c, 1.0 / n);
    let e2 = vec3::cross(a, &e1);
    (e1, e2)
}

fn retract(y: &UnitVec, step: &[f64; 3]) -> Result<UnitVec> {
    UnitVec::from_vec3(vec3::add(y.as_array(), step))
        .map_err(|_| Error::Numeric("integration step left the sphere degenerate".into()))
}

/// One Heun step of `dy/dt = v(y, t)` from `t` with signed step `h`.
fn heun_step(model: &FlowModel, y: &UnitVec, t: f64, h: f64, psi: &[f64]) -> Result<UnitVec> {
    let v1 = model.velocity(y, t, psi)?;
    let y_pred = retract(y, &vec3::scale(v1.components(), h))?;
    let v2 = model.velocity(&y_pred, t + h, psi)?;
    // transport the corrector back; fall back to Euler in the degenerate
    // case where the predictor landed antipodally
    let avg = match parallel_transport(&v2, y) {
        Ok(v2_at_y) => vec3::scale(
            &vec3::add(v1.components(), v2_at_y.components()),
            0.5,
        ),
        Err(_) => *v1.components(),
    };
    retract(y, &vec3::scale(&avg, h))
}

/// Integrate the field from uniform noise at t = 0 to a location at t = 1.
pub fn sample<R: Rng + ?Sized>(
    model: &FlowModel,
    psi: &[f64],
    steps: usize,
    rng: &mut R,
) -> Result<UnitVec> {
    if steps == 0 {
        return Err(Error::invalid("sampling needs at least one step"));
    }
    let y0 = sample_uniform(rng);
    sample_from(model, psi, steps, y0)
}

/// Deterministic variant of [`sample`] from an explicit start point.
pub fn sample_from(
    model: &FlowModel,
    psi: &[f64],
    steps: usize,
    y0: UnitVec,
) -> Result<UnitVec> {
    if steps == 0 {
        return Err(Error::invalid("sampling needs at least one step"));
    }
    let h = 1.0 / steps as f64;
    let mut y = y0;
    for k in 0..steps {
        let t = k as f64 * h;
        y = heun_step(model, &y, t, h, psi)
            .map_err(|e| Error::Numeric(format!("step {k} of {steps}: {e}")))?;
    }
    Ok(y)
}

/// Riemannian divergence of the field at `(y, t)` by central finite
/// differences along an orthonormal tangent basis.
fn divergence(model: &FlowModel, y: &UnitVec, t: f64, psi: &[f64]) -> Result<f64> {
    let (e1, e2) = tangent_basis(y);
    let mut div = 0.0;
    for e in [e1, e2] {
        let yp = retract(y, &vec3::scale(&e, DIVERGENCE_EPS))?;
        let ym = retract(y, &vec3::scale(&e, -DIVERGENCE_EPS))?;
        let vp = model.velocity(&yp, t, psi)?;
        let vm = model.velocity(&ym, t, psi)?;
        let diff = vec3::sub(vp.components(), vm.components());
        div += vec3::dot(&e, &diff) / (2.0 * DIVERGENCE_EPS);
    }
    Ok(div)
}

/// Log density of `y` under the flow, in nats with respect to the surface
/// measure of the unit sphere.
///
/// Reverse-time integration from t = 1 back to 0 recovers the base point;
/// the divergence of the field is accumulated along the path with the
/// trapezoid rule, giving log p(y) = log p_base - integral of div v dt.
/// A zero field therefore returns exactly -ln(4 pi) for every y.
pub fn log_likelihood(model: &FlowModel, y: &UnitVec, psi: &[f64], steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::invalid("likelihood needs at least one step"));
    }
    let h = 1.0 / steps as f64;
    let mut cur = *y;
    let mut div_integral = 0.0;
    let mut d_here = divergence(model, &cur, 1.0, psi)?;
    for k in 0..steps {
        let t = 1.0 - k as f64 * h;
        let next = heun_step(model, &cur, t, -h, psi)
            .map_err(|e| Error::Numeric(format!("reverse step {k} of {steps}: {e}")))?;
        let d_next = divergence(model, &next, t - h, psi)?;
        div_integral += 0.5 * h * (d_here + d_next);
        cur = next;
        d_here = d_next;
    }
    Ok(uniform_log_density() - div_integral)
}

/// One heatmap cell: the grid-center coordinate and its density.
#[derive(Debug, Clone, Serialize)]
pub struct HeatCell {
    pub lat: f64,
    pub lon: f64,
    pub log_likelihood: f64,
    pub density: f64,
}

/// Equirectangular grid of flow densities.
#[derive(Debug, Clone)]
pub struct HeatmapGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<HeatCell>,
}

/// Evaluate the density on an `rows x cols` lat-lon grid of cell centers.
pub fn heatmap(
    model: &FlowModel,
    psi: &[f64],
    rows: usize,
    cols: usize,
    steps: usize,
) -> Result<HeatmapGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("heatmap grid must be non-empty"));
    }
    let dlat = 180.0 / rows as f64;
    let dlon = 360.0 / cols as f64;
    let mut centers = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let lat = -90.0 + (r as f64 + 0.5) * dlat;
        for c in 0..cols {
            let lon = -180.0 + (c as f64 + 0.5) * dlon;
            centers.push((lat, lon));
        }
    }
    let cells = parallel::map(&centers, |&(lat, lon)| {
        let p = crate::sphere::GeoPoint::new(lat, lon)
            .expect("grid centers are valid")
            .to_unit();
        log_likelihood(model, &p, psi, steps).map(|ll| HeatCell {
            lat,
            lon,
            log_likelihood: ll,
            density: ll.exp(),
        })
    });
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(HeatmapGrid { rows, cols, cells })
}

impl HeatmapGrid {
    /// GeoJSON FeatureCollection of cell polygons with density properties.
    /// Coordinates follow the GeoJSON [lon, lat] convention.
    pub fn to_geojson(&self, meta: &Provenance) -> serde_json::Value {
        let dlat = 180.0 / self.rows as f64;
        let dlon = 360.0 / self.cols as f64;
        let features: Vec<serde_json::Value> = self
            .cells
            .iter()
            .map(|c| {
                let (lat0, lat1) = (c.lat - 0.5 * dlat, c.lat + 0.5 * dlat);
                let (lon0, lon1) = (c.lon - 0.5 * dlon, c.lon + 0.5 * dlon);
                serde_json::json!({
                    "type": "Feature",
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [[
                            [lon0, lat0], [lon1, lat0], [lon1, lat1],
                            [lon0, lat1], [lon0, lat0]
                        ]]
                    },
                    "properties": {
                        "density": c.density,
                        "log_likelihood": c.log_likelihood
                    }
                })
            })
            .collect();
        serde_json::json!({
            "type": "FeatureCollection",
            "meta": meta,
            "features": features
        })
    }

    /// Rows for the CSV export: (lat, lon, density).
    pub fn csv_rows(&self) -> impl Iterator<Item = Vec<String>> + '_ {
        self.cells.iter().map(|c| {
            vec![
                format!("{}", c.lat),
                format!("{}", c.lon),
                format!("{}", c.density),
            ]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfm::FlowModel;
    use crate::sphere::{geodesic_distance, project_tangent};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_model(psi_dim: usize, seed: u64) -> FlowModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FlowModel::new(psi_dim, &[8], 4, &mut rng).unwrap();
        m.net_mut().zero_params();
        m
    }

    #[test]
    fn sampler_output_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = FlowModel::new(2, &[8, 8], 4, &mut rng).unwrap();
        for _ in 0..50 {
            let y = sample(&model, &[0.3, -0.1], 32, &mut rng).unwrap();
            let n2: f64 = y.as_array().iter().map(|v| v * v).sum();
            assert!((n2 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_field_sampling_is_identity() {
        let model = zero_model(0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let y0 = crate::sphere::sample_uniform(&mut rng);
            let y = sample_from(&model, &[], 16, y0).unwrap();
            assert!(geodesic_distance(&y0, &y) < 1e-12);
        }
    }

    #[test]
    fn zero_field_log_likelihood_is_uniform() {
        let model = zero_model(1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let expect = uniform_log_density();
        assert!((expect + 2.5310).abs() < 1e-4);
        for _ in 0..10 {
            let y = crate::sphere::sample_uniform(&mut rng);
            let lp = log_likelihood(&model, &y, &[0.0], 64).unwrap();
            assert!((lp - expect).abs() < 1e-6, "{lp} vs {expect}");
        }
    }

    #[test]
    fn divergence_matches_projected_constant_field_closed_form() {
        // v(y) = P_y c has Riemannian divergence -2 (c . y) on the sphere;
        // emulate it with a single-layer network reading the first three
        // inputs: out_i = sum_j W[i][j] y_j with W = c shifted appropriately
        // is not expressible, so check the estimator directly instead.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = [0.4, -0.9, 0.2];
        for _ in 0..50 {
            let y = crate::sphere::sample_uniform(&mut rng);
            let (e1, e2) = tangent_basis(&y);
            let field = |p: &UnitVec| project_tangent(p, c);
            let mut est = 0.0;
            for e in [e1, e2] {
                let yp = retract(&y, &vec3::scale(&e, DIVERGENCE_EPS)).unwrap();
                let ym = retract(&y, &vec3::scale(&e, -DIVERGENCE_EPS)).unwrap();
                let diff = vec3::sub(field(&yp).components(), field(&ym).components());
                est += vec3::dot(&e, &diff) / (2.0 * DIVERGENCE_EPS);
            }
            let truth = -2.0 * vec3::dot(&c, y.as_array());
            assert!((est - truth).abs() < 1e-6, "est {est} truth {truth}");
        }
    }

    #[test]
    fn model_divergence_matches_independent_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = FlowModel::new(2, &[6], 2, &mut rng).unwrap();
        let psi = [0.2, -0.4];
        for _ in 0..20 {
            let y = crate::sphere::sample_uniform(&mut rng);
            let t = rng.random_range(0.0..1.0);
            let got = divergence(&model, &y, t, &psi).unwrap();
            // recompute through the public velocity with explicit arithmetic
            let (e1, e2) = tangent_basis(&y);
            let mut want = 0.0;
            for e in [e1, e2] {
                let yp = UnitVec::from_vec3([
                    y.x() + DIVERGENCE_EPS * e[0],
                    y.y() + DIVERGENCE_EPS * e[1],
                    y.z() + DIVERGENCE_EPS * e[2],
                ])
                .unwrap();
                let ym = UnitVec::from_vec3([
                    y.x() - DIVERGENCE_EPS * e[0],
                    y.y() - DIVERGENCE_EPS * e[1],
                    y.z() - DIVERGENCE_EPS * e[2],
                ])
                .unwrap();
                let vp = model.velocity(&yp, t, &psi).unwrap();
                let vm = model.velocity(&ym, t, &psi).unwrap();
                for i in 0..3 {
                    want += e[i] * (vp.components()[i] - vm.components()[i])
                        / (2.0 * DIVERGENCE_EPS);
                }
            }
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn heatmap_grid_shape_and_positivity() {
        let model = zero_model(0, 8);
        let grid = heatmap(&model, &[], 6, 12, 8).unwrap();
        assert_eq!(grid.cells.len(), 72);
        let u = uniform_log_density().exp();
        for cell in &grid.cells {
            assert!(cell.density > 0.0);
            assert!((cell.density - u).abs() < 1e-9);
        }
        let gj = grid.to_geojson(&Provenance {
            tool_version: "t".into(),
            config_hash: "h".into(),
            seed: 0,
        });
        assert_eq!(gj["type"], "FeatureCollection");
        assert_eq!(gj["features"].as_array().unwrap().len(), 72);
    }
}
