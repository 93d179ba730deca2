//! CLI interchange record schemas. Coordinates are degrees, (lat, lon)
//! order; vectors are plain number arrays.

use serde::{Deserialize, Serialize};

/// Synthetic geo-dataset row produced by `factory` and consumed by
/// `train-flow`, `sample`, and `nll`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoRecord {
    pub lat: f64,
    pub lon: f64,
    pub psi: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
}

/// A row that can provide a conditioning vector: either an explicit `psi`,
/// optionally with a truth coordinate, or raw fusion inputs (visual frames
/// plus atom activations) to be passed through the seeded projection.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PsiSourceRecord {
    Geo {
        lat: f64,
        lon: f64,
        psi: Vec<f64>,
    },
    Psi {
        psi: Vec<f64>,
    },
    Fusion {
        frames: Vec<Vec<f64>>,
        atoms: Vec<f64>,
    },
}

/// Output row of `sample`: a sampled point, plus the truth coordinate when
/// the psi source carried one (so `evaluate` can consume the file directly).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub pred_lat: f64,
    pub pred_lon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_lon: Option<f64>,
    pub psi_index: usize,
}

/// Output row of `nll`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NllRecord {
    pub truth_lat: f64,
    pub truth_lon: f64,
    pub log_likelihood: f64,
    pub psi_index: usize,
}

/// Decomposition-accuracy report emitted by `eval-atoms`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyReportDoc {
    pub meta: geoatoms::io::Provenance,
    pub per_step_accuracy: Vec<f64>,
    pub exact_sequence_accuracy: f64,
    pub num_samples: usize,
}
