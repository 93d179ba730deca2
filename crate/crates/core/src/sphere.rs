//! Differential geometry of the unit 2-sphere.
//!
//! Coordinates live in two representations: [`GeoPoint`] (latitude/longitude
//! in degrees) and [`UnitVec`] (the embedding on the unit sphere in R^3).
//! [`TangentVec`] carries geodesic velocities in the tangent plane of its
//! base point. Distances are returned in radians; kilometre variants use the
//! IUGG mean Earth radius.
//!
//! Everything here is a pure function of its arguments; the RNG for
//! [`sample_uniform`] is always explicit.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3;

/// IUGG mean Earth radius in kilometres. All kilometre thresholds in this
/// crate are derived from it.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Pairs closer than this (in radians) to exactly antipodal are rejected by
/// the log map and geodesic interpolation.
pub const ANTIPODAL_TOL: f64 = 1e-8;

const TANGENT_TOL: f64 = 1e-10;

/// A latitude/longitude pair in degrees. Latitude is in [-90, 90]; longitude
/// is normalized into (-180, 180] on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct RawGeoPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = Error;

    fn try_from(raw: RawGeoPoint) -> Result<Self> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite coordinate (lat {lat}, lon {lon})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::invalid(format!("latitude {lat} outside [-90, 90]")));
        }
        Ok(GeoPoint {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Embed on the unit sphere: x toward (0, 0), y toward (0, 90E), z toward
    /// the north pole.
    pub fn to_unit(&self) -> UnitVec {
        let phi = self.lat.to_radians();
        let lam = self.lon.to_radians();
        UnitVec([phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()])
    }
}

/// Wrap a longitude in degrees into (-180, 180].
fn normalize_lon(lon: f64) -> f64 {
    let r = lon.rem_euclid(360.0);
    let r = if r > 180.0 { r - 360.0 } else { r };
    // canonicalize -0.0 and the rem_euclid(360.0) == 360.0 edge
    if r == 0.0 || r == -360.0 {
        0.0
    } else {
        r
    }
}

/// A point on the unit sphere, |v| = 1 within 1e-12.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVec([f64; 3]);

impl TryFrom<[f64; 3]> for UnitVec {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        UnitVec::new(v[0], v[1], v[2])
    }
}

impl From<UnitVec> for [f64; 3] {
    fn from(v: UnitVec) -> [f64; 3] {
        v.0
    }
}

impl UnitVec {
    /// Accepts a vector already on the sphere (norm within 1e-12 of 1).
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let v = [x, y, z];
        if !vec3::is_finite(&v) {
            return Err(Error::invalid("non-finite unit vector components"));
        }
        let n2 = vec3::dot(&v, &v);
        if (n2 - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "vector norm^2 {n2} is not 1 within 1e-12"
            )));
        }
        Ok(UnitVec(v))
    }

    /// Normalize an arbitrary non-zero vector onto the sphere.
    pub fn from_vec3(v: [f64; 3]) -> Result<Self> {
        if !vec3::is_finite(&v) {
            return Err(Error::invalid("non-finite vector"));
        }
        let n = vec3::norm(&v);
        if n < 1e-300 {
            return Err(Error::invalid("zero vector cannot be normalized"));
        }
        Ok(UnitVec(vec3::scale(&v, 1.0 / n)))
    }

    pub(crate) fn from_array_unchecked(v: [f64; 3]) -> Self {
        UnitVec(v)
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn as_array(&self) -> &[f64; 3] {
        &self.0
    }

    pub fn dot(&self, other: &UnitVec) -> f64 {
        vec3::dot(&self.0, &other.0)
    }

    pub fn antipode(&self) -> UnitVec {
        UnitVec([-self.0[0], -self.0[1], -self.0[2]])
    }

    /// Back to degrees. Longitude of a pole is reported as 0.
    pub fn to_geo(&self) -> GeoPoint {
        let lat = self.0[2].clamp(-1.0, 1.0).asin().to_degrees().clamp(-90.0, 90.0);
        let mut lon = self.0[1].atan2(self.0[0]).to_degrees();
        if lon <= -180.0 {
            lon = 180.0;
        }
        if lon == 0.0 {
            lon = 0.0; // drop a possible -0.0 from atan2
        }
        GeoPoint { lat, lon }
    }
}

/// A tangent vector at `base`: orthogonal to it within 1e-10.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVec {
    base: UnitVec,
    v: [f64; 3],
}

impl TangentVec {
    pub fn new(base: UnitVec, v: [f64; 3]) -> Result<Self> {
        if !vec3::is_finite(&v) {
            return Err(Error::invalid("non-finite tangent components"));
        }
        let d = vec3::dot(base.as_array(), &v);
        if d.abs() > TANGENT_TOL {
            return Err(Error::invalid(format!(
                "vector is not tangent at base (dot product {d:e})"
            )));
        }
        Ok(TangentVec { base, v })
    }

    pub(crate) fn new_unchecked(base: UnitVec, v: [f64; 3]) -> Self {
        TangentVec { base, v }
    }

    pub fn zero(base: UnitVec) -> Self {
        TangentVec { base, v: [0.0; 3] }
    }

    pub fn base(&self) -> UnitVec {
        self.base
    }

    pub fn components(&self) -> &[f64; 3] {
        &self.v
    }

    pub fn norm(&self) -> f64 {
        vec3::norm(&self.v)
    }

    pub fn scale(&self, s: f64) -> TangentVec {
        TangentVec {
            base: self.base,
            v: vec3::scale(&self.v, s),
        }
    }

    /// Follow the geodesic from the base point for the length of this vector.
    pub fn exp(&self) -> UnitVec {
        let theta = self.norm();
        if theta < 1e-300 {
            return self.base;
        }
        let dir = vec3::scale(&self.v, 1.0 / theta);
        let p = vec3::add(
            &vec3::scale(self.base.as_array(), theta.cos()),
            &vec3::scale(&dir, theta.sin()),
        );
        // renormalize so long integrations stay on the sphere
        UnitVec::from_vec3(p).expect("exp map of finite tangent is non-zero")
    }
}

/// Exponential map from an ambient displacement: validates that `v` is in the
/// tangent plane at `base`, then follows the geodesic.
pub fn exp_map(base: &UnitVec, v: [f64; 3]) -> Result<UnitVec> {
    Ok(TangentVec::new(*base, v)?.exp())
}

/// Geodesic (great-circle) distance in radians, in [0, pi].
///
/// Uses atan2 of the cross/dot pair, which stays accurate for both nearly
/// coincident and nearly antipodal inputs.
pub fn geodesic_distance(a: &UnitVec, b: &UnitVec) -> f64 {
    let c = vec3::cross(a.as_array(), b.as_array());
    vec3::norm(&c).atan2(a.dot(b))
}

/// Geodesic distance in kilometres on the mean-radius Earth.
pub fn geodesic_distance_km(a: &UnitVec, b: &UnitVec) -> f64 {
    geodesic_distance(a, b) * EARTH_RADIUS_KM
}

/// Inverse of the exponential map: the tangent vector at `base` that reaches
/// `target` along the geodesic. Errors on (near-)antipodal pairs, where the
/// direction is undefined.
pub fn log_map(base: &UnitVec, target: &UnitVec) -> Result<TangentVec> {
    let d = geodesic_distance(base, target);
    if std::f64::consts::PI - d < ANTIPODAL_TOL {
        return Err(Error::Antipodal);
    }
    if d == 0.0 {
        return Ok(TangentVec::zero(*base));
    }
    let c = base.dot(target);
    let w = vec3::add_scaled(target.as_array(), -c, base.as_array());
    let wn = vec3::norm(&w);
    if wn < 1e-300 {
        return Ok(TangentVec::zero(*base));
    }
    Ok(TangentVec::new_unchecked(
        *base,
        vec3::scale(&w, d / wn),
    ))
}

/// Constant-speed geodesic interpolation: the point at parameter `t` on the
/// geodesic from `y0` to `y1`, plus its velocity. The endpoints are exact at
/// t = 0 and t = 1, and |velocity| equals the geodesic distance for every t.
pub fn geodesic_interpolate(
    y0: &UnitVec,
    y1: &UnitVec,
    t: f64,
) -> Result<(UnitVec, TangentVec)> {
    if !t.is_finite() || !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("interpolation parameter {t} outside [0, 1]")));
    }
    let d = geodesic_distance(y0, y1);
    if std::f64::consts::PI - d < ANTIPODAL_TOL {
        return Err(Error::Antipodal);
    }
    if d < 1e-300 {
        return Ok((*y0, TangentVec::zero(*y0)));
    }
    let sd = d.sin();
    let a = ((1.0 - t) * d).sin() / sd;
    let b = (t * d).sin() / sd;
    let p = vec3::add(
        &vec3::scale(y0.as_array(), a),
        &vec3::scale(y1.as_array(), b),
    );
    let y_t = UnitVec::from_array_unchecked(p);

    let da = -d * ((1.0 - t) * d).cos() / sd;
    let db = d * (t * d).cos() / sd;
    let vel = vec3::add(
        &vec3::scale(y0.as_array(), da),
        &vec3::scale(y1.as_array(), db),
    );
    // remove the numerically tiny normal component so the invariant holds
    let vel = vec3::add_scaled(&vel, -vec3::dot(&vel, &p), &p);
    Ok((y_t, TangentVec::new_unchecked(y_t, vel)))
}

/// Project an ambient vector onto the tangent plane at `base`. Idempotent.
pub fn project_tangent(base: &UnitVec, v: [f64; 3]) -> TangentVec {
    let d = vec3::dot(base.as_array(), &v);
    TangentVec::new_unchecked(*base, vec3::add_scaled(&v, -d, base.as_array()))
}

/// Parallel-transport `t` along the geodesic from its base to `to`.
pub fn parallel_transport(t: &TangentVec, to: &UnitVec) -> Result<TangentVec> {
    let a = t.base();
    let c = a.dot(to);
    if 1.0 + c < ANTIPODAL_TOL {
        return Err(Error::Antipodal);
    }
    let sum = vec3::add(a.as_array(), to.as_array());
    let f = vec3::dot(to.as_array(), t.components()) / (1.0 + c);
    let v = vec3::add_scaled(t.components(), -f, &sum);
    Ok(TangentVec::new_unchecked(*to, v))
}

/// Uniform point on the sphere via a normalized Gaussian 3-vector.
pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> UnitVec {
    loop {
        let v = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = vec3::norm(&v);
        if n > 1e-12 {
            return UnitVec(vec3::scale(&v, 1.0 / n));
        }
    }
}

/// A deterministic, evenly distributed set of `n` points (Fibonacci lattice).
/// Useful as quasi-Monte-Carlo nodes for integrals over the sphere.
pub fn fibonacci_lattice(n: usize) -> Vec<UnitVec> {
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
            UnitVec([r * phi.cos(), r * phi.sin(), z])
        })
        .collect()
}
