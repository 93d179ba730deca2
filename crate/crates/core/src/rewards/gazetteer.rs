//! Named-entity polygons and spherical point-in-polygon tests.
//!
//! Polygons are rings of vertices joined by great-circle arcs, loaded from a
//! GeoJSON FeatureCollection whose features carry a `name` property. The
//! first ring is the boundary, any further rings are holes. Containment uses
//! a signed angle-summation winding number evaluated entirely in 3-vector
//! space, so dateline- and pole-adjacent polygons need no special casing.
//! Boundary points count as inside. Each ring must be smaller than a
//! hemisphere, which is validated at load time.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::sphere::{GeoPoint, UnitVec};
use crate::vec3;

const ON_EDGE_TOL: f64 = 1e-9;

/// One polygon: an outer ring and zero or more holes, with vertices stored
/// as unit vectors. Rings are stored without the closing duplicate vertex,
/// along with their normalized vertex mean, which anchors the hemisphere
/// containing the whole ring.
#[derive(Debug, Clone)]
struct Ring {
    vertices: Vec<UnitVec>,
    pole: UnitVec,
}

#[derive(Debug, Clone)]
pub struct SphericalPolygon {
    rings: Vec<Ring>,
}

impl SphericalPolygon {
    /// Build from closed rings of geographic vertices (first == last, at
    /// least 4 entries including the closing one).
    pub fn from_rings(rings: Vec<Vec<GeoPoint>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::invalid("polygon needs at least one ring"));
        }
        let mut out = Vec::with_capacity(rings.len());
        for ring in &rings {
            if ring.len() < 4 {
                return Err(Error::invalid(format!(
                    "ring has {} vertices; closed rings need at least 4",
                    ring.len()
                )));
            }
            let first = ring.first().unwrap();
            let last = ring.last().unwrap();
            if (first.lat() - last.lat()).abs() > 1e-12
                || (first.lon() - last.lon()).abs() > 1e-12
            {
                return Err(Error::invalid("ring is not closed (first != last)"));
            }
            let verts: Vec<UnitVec> = ring[..ring.len() - 1].iter().map(|p| p.to_unit()).collect();
            // hemisphere check: every vertex within 90 degrees of the
            // normalized vertex mean
            let mut mean = [0.0; 3];
            for v in &verts {
                mean = vec3::add(&mean, v.as_array());
            }
            let m = UnitVec::from_vec3(mean)
                .map_err(|_| Error::invalid("degenerate ring: vertices cancel out"))?;
            for v in &verts {
                if m.dot(v) <= 0.0 {
                    return Err(Error::invalid(
                        "ring spans a hemisphere or more; polygons must be smaller",
                    ));
                }
            }
            out.push(Ring {
                vertices: verts,
                pole: m,
            });
        }
        Ok(SphericalPolygon { rings: out })
    }

    pub fn num_rings(&self) -> usize {
        self.rings.len()
    }

    /// Whether the point is on any ring edge (within tolerance).
    pub fn on_boundary(&self, p: &UnitVec) -> bool {
        self.rings
            .iter()
            .any(|ring| ring_edges(&ring.vertices).any(|(a, b)| point_on_arc(p, &a, &b)))
    }

    /// Containment with a closed boundary: inside the outer ring and not
    /// strictly inside any hole. Points on any ring edge count as inside.
    pub fn contains(&self, p: &UnitVec) -> bool {
        if self.on_boundary(p) {
            return true;
        }
        if !winding_inside(&self.rings[0], p) {
            return false;
        }
        !self.rings[1..].iter().any(|hole| winding_inside(hole, p))
    }
}

fn ring_edges(ring: &[UnitVec]) -> impl Iterator<Item = (UnitVec, UnitVec)> + '_ {
    (0..ring.len()).map(move |i| (ring[i], ring[(i + 1) % ring.len()]))
}

/// Is `p` on the great-circle arc from `a` to `b`?
fn point_on_arc(p: &UnitVec, a: &UnitVec, b: &UnitVec) -> bool {
    let n = vec3::cross(a.as_array(), b.as_array());
    let nn = vec3::norm(&n);
    if nn < 1e-15 {
        // degenerate edge: endpoints coincide
        return crate::sphere::geodesic_distance(p, a) < ON_EDGE_TOL;
    }
    if (vec3::dot(p.as_array(), &n) / nn).abs() > ON_EDGE_TOL {
        return false;
    }
    // on the great circle; within the arc iff the leg distances add up
    let dab = crate::sphere::geodesic_distance(a, b);
    let dap = crate::sphere::geodesic_distance(a, p);
    let dpb = crate::sphere::geodesic_distance(p, b);
    dap + dpb <= dab + ON_EDGE_TOL
}

/// Signed angle-summation winding test: the signed angles subtended at `p`
/// by consecutive vertices sum to about +-2 pi inside and about 0 outside.
/// The angle sum is also +-2 pi when the ring encloses the antipode of `p`,
/// so points outside the ring's hemisphere are rejected first; the ring
/// itself is confined to that hemisphere by construction.
fn winding_inside(ring: &Ring, p: &UnitVec) -> bool {
    if p.dot(&ring.pole) <= 0.0 {
        return false;
    }
    let pa = p.as_array();
    let mut total = 0.0;
    let mut prev: Option<[f64; 3]> = None;
    let mut first: Option<[f64; 3]> = None;
    for v in &ring.vertices {
        // project the vertex direction into the tangent plane at p
        let d = vec3::dot(pa, v.as_array());
        let u = vec3::add_scaled(v.as_array(), -d, pa);
        let un = vec3::norm(&u);
        if un < 1e-12 {
            // p coincides with (or is antipodal to) a vertex; the boundary
            // test upstream already handled coincidence
            return false;
        }
        let u = vec3::scale(&u, 1.0 / un);
        if let Some(prev_u) = prev {
            total += signed_angle(&prev_u, &u, pa);
        } else {
            first = Some(u);
        }
        prev = Some(u);
    }
    if let (Some(last), Some(first)) = (prev, first) {
        total += signed_angle(&last, &first, pa);
    }
    total.abs() > std::f64::consts::PI
}

/// Signed angle from tangent direction `a` to `b` around the axis `axis`.
fn signed_angle(a: &[f64; 3], b: &[f64; 3], axis: &[f64; 3]) -> f64 {
    let cross = vec3::cross(a, b);
    vec3::dot(&cross, axis).atan2(vec3::dot(a, b))
}

/// Case-folded entity name -> polygon map.
#[derive(Debug, Clone, Default)]
pub struct EntityGazetteer {
    entries: BTreeMap<String, SphericalPolygon>,
}

#[derive(Deserialize)]
struct GeoJsonDoc {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<GeoJsonFeature>,
}

#[derive(Deserialize)]
struct GeoJsonFeature {
    properties: Option<serde_json::Map<String, serde_json::Value>>,
    geometry: GeoJsonGeometry,
}

#[derive(Deserialize)]
struct GeoJsonGeometry {
    #[serde(rename = "type")]
    kind: String,
    coordinates: serde_json::Value,
}

impl EntityGazetteer {
    pub fn new() -> Self {
        EntityGazetteer::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: &str, polygon: SphericalPolygon) -> Result<()> {
        let key = name.trim().to_lowercase();
        if key.is_empty() {
            return Err(Error::invalid("entity name is empty"));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::invalid(format!("duplicate entity name {key:?}")));
        }
        self.entries.insert(key, polygon);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&SphericalPolygon> {
        self.entries.get(&name.trim().to_lowercase())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Load from a GeoJSON FeatureCollection; every feature must be a
    /// Polygon with a string `name` property. GeoJSON positions are
    /// [lon, lat].
    pub fn from_geojson_str(text: &str) -> Result<Self> {
        let doc: GeoJsonDoc = serde_json::from_str(text)?;
        if doc.kind != "FeatureCollection" {
            return Err(Error::Format(format!(
                "expected a FeatureCollection, got {:?}",
                doc.kind
            )));
        }
        let mut gaz = EntityGazetteer::new();
        for (i, feature) in doc.features.into_iter().enumerate() {
            let name = feature
                .properties
                .as_ref()
                .and_then(|p| p.get("name"))
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Format(format!("feature {i} lacks a name property")))?
                .to_string();
            if feature.geometry.kind != "Polygon" {
                return Err(Error::Format(format!(
                    "feature {name:?} has geometry {:?}; only Polygon is supported",
                    feature.geometry.kind
                )));
            }
            let rings: Vec<Vec<[f64; 2]>> =
                serde_json::from_value(feature.geometry.coordinates).map_err(|e| {
                    Error::Format(format!("feature {name:?} has bad coordinates: {e}"))
                })?;
            let rings: Vec<Vec<GeoPoint>> = rings
                .into_iter()
                .map(|ring| {
                    ring.into_iter()
                        .map(|[lon, lat]| GeoPoint::new(lat, lon))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            gaz.insert(&name, SphericalPolygon::from_rings(rings)?)?;
        }
        Ok(gaz)
    }

    pub fn from_geojson_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        EntityGazetteer::from_geojson_str(&text)
    }
}

/// Case-insensitive longest-match scan of the text against gazetteer names.
/// Returns unique names in order of first occurrence.
pub fn parse_entities(text: &str, gazetteer: &EntityGazetteer) -> Vec<String> {
    let folded = text.to_lowercase();
    let names: Vec<&str> = gazetteer.names().collect();
    let mut found: Vec<String> = Vec::new();
    let mut pos = 0;
    let bytes = folded.as_bytes();
    while pos < bytes.len() {
        let rest = &folded[pos..];
        let mut best: Option<&str> = None;
        for name in &names {
            if rest.starts_with(name) && best.map(|b| name.len() > b.len()).unwrap_or(true) {
                best = Some(name);
            }
        }
        if let Some(name) = best {
            if !found.iter().any(|f| f == name) {
                found.push(name.to_string());
            }
            pos += name.len();
        } else {
            // advance one character, not one byte
            pos += rest.chars().next().map(|c| c.len_utf8()).unwrap_or(1);
        }
    }
    found
}
