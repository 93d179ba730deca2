//! `evaluate`: metric report from evaluation records.

use std::path::Path;

use geoatoms::eval::{compute_report, EvalRecord, EvalRecordRow, MetricReport};
use geoatoms::io::{read_jsonl, save_json, write_csv};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{ensure_parent_dir, require_file, CliError};

#[derive(Serialize)]
struct ReportDoc {
    meta: geoatoms::io::Provenance,
    #[serde(flatten)]
    report: MetricReport,
}

pub fn run(
    cfg: &RunConfig,
    records_path: &Path,
    out_json: Option<&Path>,
    out_csv: Option<&Path>,
) -> Result<(), CliError> {
    require_file(records_path)?;
    let rows: Vec<EvalRecordRow> = read_jsonl(records_path)?;
    let records: Vec<EvalRecord> = rows
        .into_iter()
        .map(EvalRecord::try_from)
        .collect::<Result<_, _>>()
        .map_err(CliError::from)?;
    let report = compute_report(&records, cfg.knn_k)?;
    let doc = ReportDoc {
        meta: cfg.provenance(),
        report: report.clone(),
    };
    match out_json {
        Some(path) => {
            ensure_parent_dir(path)?;
            save_json(path, &doc)?;
            eprintln!("evaluate: report written to {}", path.display());
        }
        None => {
            let text =
                serde_json::to_string_pretty(&doc).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("{text}");
        }
    }
    if let Some(path) = out_csv {
        ensure_parent_dir(path)?;
        write_csv(
            path,
            &cfg.provenance(),
            &MetricReport::csv_header(),
            std::iter::once(report.csv_row()),
        )?;
        eprintln!("evaluate: csv row written to {}", path.display());
    }
    Ok(())
}
