//! `factory`: generate the clip bank, train/eval mixtures, and the synthetic
//! geo datasets, all reproducible from the seed.

use std::path::Path;

use geoatoms::atoms::{make_clip_bank, make_mixture, MixtureRecord};
use geoatoms::io::write_jsonl;
use geoatoms::sphere::{project_tangent, sample_uniform, UnitVec, EARTH_RADIUS_KM};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::records::GeoRecord;
use crate::{rng_stream, CliError};

pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
    let prov = cfg.provenance();
    let mut rng = rng_stream(cfg.seed, 1);

    let bank = make_clip_bank(
        cfg.classes,
        cfg.clips_per_class,
        cfg.dim,
        cfg.clip_noise,
        &mut rng,
    )?;
    let bank_path = out_dir.join("bank.jsonl");
    write_jsonl(&bank_path, &prov, bank.records())?;

    let train_path = out_dir.join("mixtures_train.jsonl");
    let train: Vec<MixtureRecord> = (0..cfg.train_mixtures)
        .map(|_| make_mixture(&bank, cfg.mixture_k, &mut rng).map(|m| MixtureRecord::from(&m)))
        .collect::<Result<_, _>>()?;
    write_jsonl(&train_path, &prov, train.iter())?;

    let eval_path = out_dir.join("mixtures_eval.jsonl");
    let eval: Vec<MixtureRecord> = (0..cfg.eval_mixtures)
        .map(|_| make_mixture(&bank, cfg.mixture_k, &mut rng).map(|m| MixtureRecord::from(&m)))
        .collect::<Result<_, _>>()?;
    write_jsonl(&eval_path, &prov, eval.iter())?;

    // conditional geo clusters: uniform centers, one-hot psi, tangent
    // Gaussian spread
    let centers: Vec<UnitVec> = (0..cfg.geo_clusters).map(|_| sample_uniform(&mut rng)).collect();
    let geo_train_path = out_dir.join("geo_train.jsonl");
    let geo_train = draw_geo(cfg, &centers, cfg.geo_points, &mut rng);
    write_jsonl(&geo_train_path, &prov, geo_train.iter())?;
    let geo_eval_path = out_dir.join("geo_eval.jsonl");
    let geo_eval = draw_geo(cfg, &centers, cfg.geo_eval_points, &mut rng);
    write_jsonl(&geo_eval_path, &prov, geo_eval.iter())?;

    eprintln!(
        "factory: {} classes x {} clips (dim {}), {} train + {} eval mixtures (k={}), \
         {} geo clusters with {} train + {} eval points -> {}",
        cfg.classes,
        cfg.clips_per_class,
        cfg.dim,
        train.len(),
        eval.len(),
        cfg.mixture_k,
        cfg.geo_clusters,
        geo_train.len(),
        geo_eval.len(),
        out_dir.display()
    );
    Ok(())
}

fn draw_geo<R: Rng + ?Sized>(
    cfg: &RunConfig,
    centers: &[UnitVec],
    count: usize,
    rng: &mut R,
) -> Vec<GeoRecord> {
    let sigma = cfg.geo_spread_km / EARTH_RADIUS_KM;
    (0..count)
        .map(|i| {
            let c = i % centers.len();
            let g1: f64 = StandardNormal.sample(rng);
            let g2: f64 = StandardNormal.sample(rng);
            let (e1, e2) = orthobasis(&centers[c]);
            let v = [
                sigma * (g1 * e1[0] + g2 * e2[0]),
                sigma * (g1 * e1[1] + g2 * e2[1]),
                sigma * (g1 * e1[2] + g2 * e2[2]),
            ];
            let p = project_tangent(&centers[c], v).exp().to_geo();
            let mut psi = vec![0.0; centers.len()];
            psi[c] = 1.0;
            GeoRecord {
                lat: p.lat(),
                lon: p.lon(),
                psi,
                cluster: Some(c),
            }
        })
        .collect()
}

fn orthobasis(y: &UnitVec) -> ([f64; 3], [f64; 3]) {
    let a = y.as_array();
    let mut min_i = 0;
    for i in 1..3 {
        if a[i].abs() < a[min_i].abs() {
            min_i = i;
        }
    }
    let mut axis = [0.0; 3];
    axis[min_i] = 1.0;
    let c = [
        a[1] * axis[2] - a[2] * axis[1],
        a[2] * axis[0] - a[0] * axis[2],
        a[0] * axis[1] - a[1] * axis[0],
    ];
    let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    let e1 = [c[0] / n, c[1] / n, c[2] / n];
    let e2 = [
        a[1] * e1[2] - a[2] * e1[1],
        a[2] * e1[0] - a[0] * e1[2],
        a[0] * e1[1] - a[1] * e1[0],
    ];
    (e1, e2)
}
