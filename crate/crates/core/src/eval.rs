//! Geolocation evaluation: threshold accuracies, median geodesic error, NLL
//! summaries, and k-nearest-neighbor manifold metrics over sample sets.
//!
//! Precision/recall/density/coverage follow the usual kNN-ball formulation,
//! with geodesic distance and a default k of 3. The distance thresholds are
//! the four standard scales (25, 200, 750, 2500 km); a prediction exactly at
//! a threshold counts as correct.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::sphere::{geodesic_distance_km, GeoPoint, UnitVec};

/// The standard evaluation scales in kilometres.
pub const STANDARD_THRESHOLDS_KM: [f64; 4] = [25.0, 200.0, 750.0, 2500.0];

/// Default neighborhood size for the sample-set metrics.
pub const DEFAULT_KNN_K: usize = 3;

/// One evaluation record: a prediction/truth pair with optional likelihood
/// and an optional sample set from the predictive distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub prediction: GeoPoint,
    pub truth: GeoPoint,
    pub log_likelihood: Option<f64>,
    pub samples: Option<Vec<GeoPoint>>,
}

impl EvalRecord {
    pub fn error_km(&self) -> f64 {
        geodesic_distance_km(&self.prediction.to_unit(), &self.truth.to_unit())
    }
}

/// JSONL row of an [`EvalRecord`]. Coordinates are degrees, (lat, lon)
/// order; samples are [lat, lon] pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecordRow {
    pub pred_lat: f64,
    pub pred_lon: f64,
    pub truth_lat: f64,
    pub truth_lon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<[f64; 2]>>,
}

impl TryFrom<EvalRecordRow> for EvalRecord {
    type Error = Error;

    fn try_from(row: EvalRecordRow) -> Result<Self> {
        let samples = match row.samples {
            Some(list) => Some(
                list.into_iter()
                    .map(|[lat, lon]| GeoPoint::new(lat, lon))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(EvalRecord {
            prediction: GeoPoint::new(row.pred_lat, row.pred_lon)?,
            truth: GeoPoint::new(row.truth_lat, row.truth_lon)?,
            log_likelihood: row.log_likelihood,
            samples,
        })
    }
}

impl From<&EvalRecord> for EvalRecordRow {
    fn from(r: &EvalRecord) -> Self {
        EvalRecordRow {
            pred_lat: r.prediction.lat(),
            pred_lon: r.prediction.lon(),
            truth_lat: r.truth.lat(),
            truth_lon: r.truth.lon(),
            log_likelihood: r.log_likelihood,
            samples: r
                .samples
                .as_ref()
                .map(|s| s.iter().map(|p| [p.lat(), p.lon()]).collect()),
        }
    }
}

/// Fraction of records within each threshold (inclusive).
pub fn accuracy_at(records: &[EvalRecord], thresholds_km: &[f64]) -> Vec<(f64, f64)> {
    if records.is_empty() {
        return thresholds_km.iter().map(|&t| (t, 0.0)).collect();
    }
    let errors = parallel::map(records, |r| r.error_km());
    thresholds_km
        .iter()
        .map(|&t| {
            let hits = errors.iter().filter(|&&e| e <= t).count();
            (t, hits as f64 / records.len() as f64)
        })
        .collect()
}

/// Median geodesic error in kilometres; an even count averages the middle
/// pair.
pub fn median_error(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no records"));
    }
    let mut errors = parallel::map(records, |r| r.error_km());
    errors.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = errors.len();
    Ok(if n % 2 == 1 {
        errors[n / 2]
    } else {
        0.5 * (errors[n / 2 - 1] + errors[n / 2])
    })
}

/// Mean negative log-likelihood over the records that carry one.
pub fn nll_summary(records: &[EvalRecord]) -> Option<f64> {
    let lls: Vec<f64> = records.iter().filter_map(|r| r.log_likelihood).collect();
    if lls.is_empty() {
        return None;
    }
    Some(-lls.iter().sum::<f64>() / lls.len() as f64)
}

/// kNN manifold metrics over two point sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrdMetrics {
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
}

/// Precision / recall / density / coverage with geodesic distance:
/// each reference point gets a ball out to its k-th nearest neighbor within
/// the reference set; precision is the fraction of generated points covered
/// by some ball, density the mean ball-membership count normalized by k,
/// coverage the fraction of reference balls holding at least one generated
/// point, and recall the mirror of precision with the roles swapped.
pub fn prd_metrics(
    generated: &[UnitVec],
    reference: &[UnitVec],
    k: usize,
) -> Result<PrdMetrics> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if generated.len() <= k || reference.len() <= k {
        return Err(Error::invalid(format!(
            "need more than k = {k} points in each set (got {} and {})",
            generated.len(),
            reference.len()
        )));
    }
    let ref_radii = knn_radii(reference, k);
    let gen_radii = knn_radii(generated, k);

    let mut covered_gen = 0usize;
    let mut membership = 0usize;
    for g in generated {
        let mut inside_any = false;
        for (r, &rad) in reference.iter().zip(&ref_radii) {
            if crate::sphere::geodesic_distance(g, r) <= rad {
                inside_any = true;
                membership += 1;
            }
        }
        covered_gen += inside_any as usize;
    }

    let mut covered_ref_balls = 0usize;
    let mut recalled_ref = 0usize;
    for (r, &rad) in reference.iter().zip(&ref_radii) {
        if generated
            .iter()
            .any(|g| crate::sphere::geodesic_distance(g, r) <= rad)
        {
            covered_ref_balls += 1;
        }
        // recall: is this reference point inside some generated kNN ball?
        if generated
            .iter()
            .zip(&gen_radii)
            .any(|(g, &grad)| crate::sphere::geodesic_distance(r, g) <= grad)
        {
            recalled_ref += 1;
        }
    }

    Ok(PrdMetrics {
        precision: covered_gen as f64 / generated.len() as f64,
        recall: recalled_ref as f64 / reference.len() as f64,
        density: membership as f64 / (k as f64 * generated.len() as f64),
        coverage: covered_ref_balls as f64 / reference.len() as f64,
    })
}

/// Distance to the k-th nearest other point, per point.
fn knn_radii(points: &[UnitVec], k: usize) -> Vec<f64> {
    parallel::map(points, |p| {
        let mut d: Vec<f64> = points
            .iter()
            .filter(|q| !std::ptr::eq(*q, p))
            .map(|q| crate::sphere::geodesic_distance(p, q))
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        d[k - 1]
    })
}

/// Full evaluation report. Accuracies are non-decreasing in the threshold by
/// construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Vec<ThresholdAccuracy>,
    pub median_error_km: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prd: Option<PrdMetrics>,
    pub num_records: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThresholdAccuracy {
    pub threshold_km: f64,
    pub fraction: f64,
}

impl MetricReport {
    pub fn csv_header() -> Vec<&'static str> {
        vec![
            "acc_25km",
            "acc_200km",
            "acc_750km",
            "acc_2500km",
            "median_error_km",
            "mean_nll",
            "precision",
            "recall",
            "density",
            "coverage",
            "num_records",
        ]
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut row: Vec<String> = self.accuracy.iter().map(|a| a.fraction.to_string()).collect();
        row.push(self.median_error_km.to_string());
        row.push(self.mean_nll.map(|v| v.to_string()).unwrap_or_default());
        match &self.prd {
            Some(p) => {
                row.push(p.precision.to_string());
                row.push(p.recall.to_string());
                row.push(p.density.to_string());
                row.push(p.coverage.to_string());
            }
            None => row.extend(std::iter::repeat_n(String::new(), 4)),
        }
        row.push(self.num_records.to_string());
        row
    }
}

/// Compute the standard report: threshold accuracies, median error, NLL
/// summary, and (when any record carries samples) the kNN metrics of the
/// pooled sample cloud against the truth points.
pub fn compute_report(records: &[EvalRecord], knn_k: usize) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    let accuracy = accuracy_at(records, &STANDARD_THRESHOLDS_KM)
        .into_iter()
        .map(|(threshold_km, fraction)| ThresholdAccuracy {
            threshold_km,
            fraction,
        })
        .collect();
    let median = median_error(records)?;
    let mean_nll = nll_summary(records);
    let generated: Vec<UnitVec> = records
        .iter()
        .filter_map(|r| r.samples.as_ref())
        .flatten()
        .map(|p| p.to_unit())
        .collect();
    let prd = if generated.len() > knn_k {
        let reference: Vec<UnitVec> = records.iter().map(|r| r.truth.to_unit()).collect();
        if reference.len() > knn_k {
            Some(prd_metrics(&generated, &reference, knn_k)?)
        } else {
            None
        }
    } else {
        None
    };
    Ok(MetricReport {
        accuracy,
        median_error_km: median,
        mean_nll,
        prd,
        num_records: records.len(),
    })
}
