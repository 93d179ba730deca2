//! Hierarchical spherical cell indexing.
//!
//! The sphere is split into six cube faces by gnomonic projection; each face
//! carries a quadtree over its (u, v) square. A [`CellId`] is a face plus a
//! path of quadrant digits, one per level. Only the hierarchy semantics
//! matter to consumers (nesting, equality at a level); there is no claim of
//! bit compatibility with any external cell library.
//!
//! Face order is +x, -x, +y, -y, +z, -z. Points landing exactly on a face
//! edge or corner are assigned the lowest qualifying face index, so
//! [`cell_at`] is a function of its input.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::UnitVec;

/// Finest supported subdivision level.
pub const MAX_LEVEL: u8 = 14;

/// Face index of the +z (north polar) face.
pub const FACE_POS_Z: u8 = 4;

/// A cell in the face quadtree: `level` quadrant digits below face level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CellId {
    face: u8,
    path: Vec<u8>,
}

impl CellId {
    pub fn face(&self) -> u8 {
        self.face
    }

    pub fn level(&self) -> u8 {
        self.path.len() as u8
    }

    pub fn path(&self) -> &[u8] {
        &self.path
    }

    /// The enclosing cell one level up, or `None` at face level.
    pub fn parent(&self) -> Option<CellId> {
        if self.path.is_empty() {
            return None;
        }
        Some(CellId {
            face: self.face,
            path: self.path[..self.path.len() - 1].to_vec(),
        })
    }

    /// (u, v) bounds of this cell on its face, each a half-open-by-convention
    /// [lo, hi) interval except at the +1 face edge.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let (mut ulo, mut uhi) = (-1.0f64, 1.0f64);
        let (mut vlo, mut vhi) = (-1.0f64, 1.0f64);
        for &d in &self.path {
            let umid = 0.5 * (ulo + uhi);
            let vmid = 0.5 * (vlo + vhi);
            if d & 1 == 1 {
                ulo = umid;
            } else {
                uhi = umid;
            }
            if d & 2 == 2 {
                vlo = vmid;
            } else {
                vhi = vmid;
            }
        }
        ([ulo, uhi], [vlo, vhi])
    }
}

impl fmt::Display for CellId {
    /// Text token `face/digits`, e.g. `3/0213`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/", self.face)?;
        for d in &self.path {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromStr for CellId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (face_str, digits) = s.split_once('/').unwrap_or((s, ""));
        let face: u8 = face_str
            .parse()
            .map_err(|_| Error::Format(format!("bad cell token {s:?}")))?;
        if face >= 6 {
            return Err(Error::Format(format!("face {face} out of range in {s:?}")));
        }
        if digits.len() > MAX_LEVEL as usize {
            return Err(Error::Format(format!("cell path too deep in {s:?}")));
        }
        let mut path = Vec::with_capacity(digits.len());
        for c in digits.chars() {
            match c {
                '0'..='3' => path.push(c as u8 - b'0'),
                _ => return Err(Error::Format(format!("bad quadrant digit in {s:?}"))),
            }
        }
        Ok(CellId { face, path })
    }
}

impl From<CellId> for String {
    fn from(c: CellId) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for CellId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Gnomonic face coordinates: the lowest qualifying face index wins ties on
/// edges and corners; (u, v) are the two non-dominant components divided by
/// the dominant magnitude, both in [-1, 1].
fn face_uv(p: &UnitVec) -> (u8, f64, f64) {
    let (x, y, z) = (p.x(), p.y(), p.z());
    let m = x.abs().max(y.abs()).max(z.abs());
    debug_assert!(m > 0.0, "unit vector has positive dominant axis");
    let signed = [x, -x, y, -y, z, -z];
    let face = signed
        .iter()
        .position(|&s| s == m)
        .expect("dominant axis matches one signed face") as u8;
    let (u, v) = match face {
        0 | 1 => (y / m, z / m),
        2 | 3 => (x / m, z / m),
        _ => (x / m, y / m),
    };
    (face, u, v)
}

/// The cell containing `p` at `level`. Deterministic and bit-stable.
pub fn cell_at(p: &UnitVec, level: u8) -> Result<CellId> {
    if level > MAX_LEVEL {
        return Err(Error::invalid(format!(
            "cell level {level} out of range [0, {MAX_LEVEL}]"
        )));
    }
    let (face, u, v) = face_uv(p);
    let mut path = Vec::with_capacity(level as usize);
    let (mut ulo, mut uhi) = (-1.0f64, 1.0f64);
    let (mut vlo, mut vhi) = (-1.0f64, 1.0f64);
    for _ in 0..level {
        let umid = 0.5 * (ulo + uhi);
        let vmid = 0.5 * (vlo + vhi);
        let ub = u >= umid;
        let vb = v >= vmid;
        path.push(ub as u8 | ((vb as u8) << 1));
        if ub {
            ulo = umid;
        } else {
            uhi = umid;
        }
        if vb {
            vlo = vmid;
        } else {
            vhi = vmid;
        }
    }
    Ok(CellId { face, path })
}

/// Cell membership, defined as cell equality at the cell's level.
pub fn contains(cell: &CellId, p: &UnitVec) -> bool {
    cell_at(p, cell.level()).map(|c| c == *cell).unwrap_or(false)
}

/// Whether two points share the cell at `level`.
pub fn same_cell(a: &UnitVec, b: &UnitVec, level: u8) -> Result<bool> {
    Ok(cell_at(a, level)? == cell_at(b, level)?)
}

/// Cell levels with normalized weights, the shape consumed by the geometry
/// reward. Defaults to levels (1, 5, 12) with weights (0.2, 0.3, 0.5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u8, f64)>", into = "Vec<(u8, f64)>")]
pub struct CellLevelWeights {
    entries: Vec<(u8, f64)>,
}

impl CellLevelWeights {
    pub fn new(entries: Vec<(u8, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("cell-level weights cannot be empty"));
        }
        let mut seen = [false; MAX_LEVEL as usize + 1];
        let mut sum = 0.0;
        for &(level, w) in &entries {
            if level > MAX_LEVEL {
                return Err(Error::invalid(format!("weight level {level} out of range")));
            }
            if seen[level as usize] {
                return Err(Error::invalid(format!("duplicate weight level {level}")));
            }
            seen[level as usize] = true;
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("weight {w} must be finite and >= 0")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {sum}, expected 1")));
        }
        Ok(CellLevelWeights { entries })
    }

    pub fn entries(&self) -> &[(u8, f64)] {
        &self.entries
    }
}

impl Default for CellLevelWeights {
    fn default() -> Self {
        CellLevelWeights {
            entries: vec![(1, 0.2), (5, 0.3), (12, 0.5)],
        }
    }
}

impl TryFrom<Vec<(u8, f64)>> for CellLevelWeights {
    type Error = Error;

    fn try_from(v: Vec<(u8, f64)>) -> Result<Self> {
        CellLevelWeights::new(v)
    }
}

impl From<CellLevelWeights> for Vec<(u8, f64)> {
    fn from(w: CellLevelWeights) -> Self {
        w.entries
    }
}
