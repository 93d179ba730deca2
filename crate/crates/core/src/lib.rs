//! Geolocation toolkit built around three pieces: iterative decomposition of
//! embedding mixtures into class-partitioned acoustic atoms, flow matching on
//! the unit sphere for coordinate prediction with calibrated likelihoods, and
//! the reward/evaluation stack that scores predictions against hierarchical
//! spherical cells, entity polygons, and geodesic thresholds.
//!
//! All numerics are `f64`. Every randomized operation takes an explicit RNG;
//! nothing seeds itself, so identical seeds give identical results. Batch
//! operations run on rayon when the `parallel` feature (default) is enabled
//! and fall back to plain iteration otherwise; both paths produce identical
//! output since reductions stay sequential and order-preserving.

pub mod atoms;
pub mod cells;
pub mod error;
pub mod eval;
pub mod io;
pub mod net;
pub mod parallel;
pub mod rewards;
pub mod rfm;
pub mod sphere;

mod vec3;

pub use error::{Error, Result};
pub use sphere::{GeoPoint, TangentVec, UnitVec, EARTH_RADIUS_KM};
