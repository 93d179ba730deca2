//! `train-flow`, `sample`, `nll`, and `heatmap`.

use std::path::Path;

use geoatoms::io::{read_jsonl, save_json, write_csv, write_jsonl};
use geoatoms::parallel;
use geoatoms::rfm::{
    self, fuse, FlowCheckpoint, FlowModel, FlowTrainConfig, FusionInput, FusionProjection,
};
use geoatoms::sphere::{GeoPoint, UnitVec};

use crate::config::RunConfig;
use crate::records::{GeoRecord, NllRecord, PsiSourceRecord, SampleRecord};
use crate::{ensure_parent_dir, require_file, rng_stream, CliError};

fn load_flow(path: &Path) -> Result<FlowModel, CliError> {
    let ckpt: FlowCheckpoint = geoatoms::io::load_json(path)?;
    Ok(ckpt.into_model()?)
}

fn geo_to_pairs(records: &[GeoRecord]) -> Result<Vec<(UnitVec, Vec<f64>)>, CliError> {
    records
        .iter()
        .map(|r| {
            let p = GeoPoint::new(r.lat, r.lon)?.to_unit();
            Ok((p, r.psi.clone()))
        })
        .collect()
}

pub fn train(
    cfg: &RunConfig,
    geo_path: &Path,
    out_flow: &Path,
    out_curve: &Path,
) -> Result<(), CliError> {
    require_file(geo_path)?;
    ensure_parent_dir(out_flow)?;
    ensure_parent_dir(out_curve)?;
    let prov = cfg.provenance();

    let records: Vec<GeoRecord> = read_jsonl(geo_path)?;
    if records.is_empty() {
        return Err(CliError::Runtime("no flow training records".into()));
    }
    let psi_dim = records[0].psi.len();
    if records.iter().any(|r| r.psi.len() != psi_dim) {
        return Err(CliError::Runtime("psi dimensions differ across records".into()));
    }
    let data = geo_to_pairs(&records)?;

    let mut rng = rng_stream(cfg.seed, 3);
    let mut model = FlowModel::new(psi_dim, &cfg.hidden_dims(), cfg.time_frequencies, &mut rng)?;
    model.sample_steps = cfg.sample_steps;
    model.likelihood_steps = cfg.likelihood_steps;
    let report = rfm::train_flow(
        &mut model,
        &data,
        FlowTrainConfig {
            epochs: cfg.flow_epochs,
            batch_size: cfg.flow_batch,
            lr: cfg.flow_lr,
        },
        &mut rng,
    )?;

    save_json(out_flow, &model.to_checkpoint(prov.clone()))?;
    write_csv(
        out_curve,
        &prov,
        &["batch", "loss"],
        report
            .batch_losses
            .iter()
            .enumerate()
            .map(|(i, l)| vec![i.to_string(), l.to_string()]),
    )?;
    eprintln!(
        "train-flow: {} records (psi dim {psi_dim}), {} epochs -> {}",
        data.len(),
        cfg.flow_epochs,
        out_flow.display()
    );
    Ok(())
}

fn parse_inline_psi(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad psi component {v:?}: {e}")))
        })
        .collect()
}

/// Resolve psi sources: each yields (psi, optional truth coordinate).
fn resolve_psi_sources(
    cfg: &RunConfig,
    model: &FlowModel,
    psi_file: Option<&Path>,
    inline: Option<&str>,
) -> Result<Vec<(Vec<f64>, Option<GeoPoint>)>, CliError> {
    match (psi_file, inline) {
        (Some(path), _) => {
            require_file(path)?;
            let rows: Vec<PsiSourceRecord> = read_jsonl(path)?;
            if rows.is_empty() {
                return Err(CliError::Runtime("psi source file is empty".into()));
            }
            let mut fusion: Option<FusionProjection> = None;
            rows.into_iter()
                .map(|row| match row {
                    PsiSourceRecord::Geo { lat, lon, psi } => {
                        Ok((psi, Some(GeoPoint::new(lat, lon)?)))
                    }
                    PsiSourceRecord::Psi { psi } => Ok((psi, None)),
                    PsiSourceRecord::Fusion { frames, atoms } => {
                        if frames.is_empty() {
                            return Err(CliError::Runtime(
                                "fusion record needs at least one frame".into(),
                            ));
                        }
                        let proj = match &fusion {
                            Some(p) => p,
                            None => {
                                let mut rng = rng_stream(cfg.seed, 7);
                                fusion = Some(FusionProjection::seeded(
                                    frames[0].len(),
                                    atoms.len(),
                                    model.psi_dim(),
                                    &mut rng,
                                )?);
                                fusion.as_ref().unwrap()
                            }
                        };
                        let psi = fuse(
                            &FusionInput {
                                visual_frames: frames,
                                atom_activation: atoms,
                            },
                            proj,
                        )?;
                        Ok((psi.0, None))
                    }
                })
                .collect()
        }
        (None, Some(text)) => Ok(vec![(parse_inline_psi(text)?, None)]),
        (None, None) => Err(CliError::Config(
            "either --psi-file or --psi is required".into(),
        )),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn sample(
    cfg: &RunConfig,
    flow_path: &Path,
    psi_file: Option<&Path>,
    inline_psi: Option<&str>,
    n: usize,
    steps: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    require_file(flow_path)?;
    ensure_parent_dir(out)?;
    if n == 0 {
        return Err(CliError::Config("--n must be at least 1".into()));
    }
    let model = load_flow(flow_path)?;
    let sources = resolve_psi_sources(cfg, &model, psi_file, inline_psi)?;
    let steps = steps.unwrap_or(model.sample_steps);
    let mut rng = rng_stream(cfg.seed, 4);

    // draw the start points sequentially for determinism, then integrate in
    // parallel
    let mut jobs: Vec<(usize, Vec<f64>, Option<GeoPoint>, UnitVec)> = Vec::new();
    for (idx, (psi, truth)) in sources.iter().enumerate() {
        for _ in 0..n {
            jobs.push((
                idx,
                psi.clone(),
                *truth,
                geoatoms::sphere::sample_uniform(&mut rng),
            ));
        }
    }
    let results = parallel::map(&jobs, |(idx, psi, truth, y0)| {
        rfm::sample_from(&model, psi, steps, *y0).map(|y| {
            let p = y.to_geo();
            SampleRecord {
                pred_lat: p.lat(),
                pred_lon: p.lon(),
                truth_lat: truth.map(|t| t.lat()),
                truth_lon: truth.map(|t| t.lon()),
                psi_index: *idx,
            }
        })
    });
    let records: Vec<SampleRecord> = results
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(CliError::from)?;
    write_jsonl(out, &cfg.provenance(), records.iter())?;
    eprintln!(
        "sample: {} psi sources x {n} -> {} points in {}",
        sources.len(),
        records.len(),
        out.display()
    );
    Ok(())
}

pub fn nll(
    cfg: &RunConfig,
    flow_path: &Path,
    records_path: &Path,
    steps: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    require_file(flow_path)?;
    require_file(records_path)?;
    ensure_parent_dir(out)?;
    let model = load_flow(flow_path)?;
    let rows: Vec<GeoRecord> = read_jsonl(records_path)?;
    let steps = steps.unwrap_or(model.likelihood_steps);
    let idx: Vec<usize> = (0..rows.len()).collect();
    let results = parallel::map(&idx, |&i| {
        let row = &rows[i];
        let y = GeoPoint::new(row.lat, row.lon)?.to_unit();
        let ll = rfm::log_likelihood(&model, &y, &row.psi, steps)?;
        Ok::<_, geoatoms::Error>(NllRecord {
            truth_lat: row.lat,
            truth_lon: row.lon,
            log_likelihood: ll,
            psi_index: i,
        })
    });
    let records: Vec<NllRecord> = results
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(CliError::from)?;
    write_jsonl(out, &cfg.provenance(), records.iter())?;
    let mean_nll = -records.iter().map(|r| r.log_likelihood).sum::<f64>()
        / records.len().max(1) as f64;
    eprintln!(
        "nll: {} records, mean NLL {mean_nll:.4} -> {}",
        records.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn heatmap(
    cfg: &RunConfig,
    flow_path: &Path,
    inline_psi: Option<&str>,
    psi_file: Option<&Path>,
    rows: usize,
    cols: Option<usize>,
    steps: Option<usize>,
    out_geojson: &Path,
    out_csv: &Path,
) -> Result<(), CliError> {
    require_file(flow_path)?;
    ensure_parent_dir(out_geojson)?;
    ensure_parent_dir(out_csv)?;
    let model = load_flow(flow_path)?;
    let psi = match (inline_psi, psi_file) {
        (Some(text), _) => parse_inline_psi(text)?,
        (None, Some(path)) => {
            let sources = resolve_psi_sources(cfg, &model, Some(path), None)?;
            sources.into_iter().next().expect("non-empty checked").0
        }
        (None, None) => {
            return Err(CliError::Config(
                "either --psi or --psi-file is required".into(),
            ))
        }
    };
    let cols = cols.unwrap_or(rows * 2);
    let steps = steps.unwrap_or(model.likelihood_steps);
    let grid = rfm::heatmap(&model, &psi, rows, cols, steps)?;
    let prov = cfg.provenance();
    let geojson = grid.to_geojson(&prov);
    std::fs::write(
        out_geojson,
        serde_json::to_string_pretty(&geojson).map_err(|e| CliError::Runtime(e.to_string()))?,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_csv(out_csv, &prov, &["lat", "lon", "density"], grid.csv_rows())?;
    eprintln!(
        "heatmap: {rows}x{cols} grid -> {} and {}",
        out_geojson.display(),
        out_csv.display()
    );
    Ok(())
}
