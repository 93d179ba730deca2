//! `train-atoms` and `eval-atoms`.

use std::path::Path;

use geoatoms::atoms::{
    decomposition_accuracy, train_mart, Dictionary, DictionaryCheckpoint, MartConfig,
    MixtureRecord, MixtureSample,
};
use geoatoms::io::{read_jsonl, save_json, write_csv};

use crate::config::RunConfig;
use crate::records::AccuracyReportDoc;
use crate::{ensure_parent_dir, require_file, rng_stream, CliError};

fn load_mixtures(path: &Path) -> Result<Vec<MixtureSample>, CliError> {
    let rows: Vec<MixtureRecord> = read_jsonl(path)?;
    rows.into_iter()
        .map(|r| MixtureSample::try_from(r).map_err(CliError::from))
        .collect()
}

pub fn train(
    cfg: &RunConfig,
    mixtures_path: &Path,
    out_dict: &Path,
    out_curve: &Path,
) -> Result<(), CliError> {
    require_file(mixtures_path)?;
    ensure_parent_dir(out_dict)?;
    ensure_parent_dir(out_curve)?;
    let prov = cfg.provenance();

    let mixtures = load_mixtures(mixtures_path)?;
    if mixtures.is_empty() {
        return Err(CliError::Runtime("no training mixtures".into()));
    }
    let dim = mixtures[0].x_mix().len();
    if dim != cfg.dim {
        return Err(CliError::Config(format!(
            "mixtures have dim {dim} but config says {}",
            cfg.dim
        )));
    }

    let mut rng = rng_stream(cfg.seed, 2);
    let mut dict = Dictionary::random(cfg.dim, cfg.classes, cfg.block_size, &mut rng)?;
    let report = train_mart(
        &mut dict,
        &mixtures,
        MartConfig {
            epochs: cfg.atoms_epochs,
            batch_size: cfg.atoms_batch,
            lr: cfg.atoms_lr,
        },
        &mut rng,
    )?;

    save_json(out_dict, &dict.to_checkpoint(prov.clone()))?;
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
        "train-atoms: {} mixtures, {} epochs -> {} ({} batches logged to {})",
        mixtures.len(),
        cfg.atoms_epochs,
        out_dict.display(),
        report.batch_losses.len(),
        out_curve.display()
    );
    Ok(())
}

pub fn eval(
    cfg: &RunConfig,
    dict_path: &Path,
    mixtures_path: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    require_file(dict_path)?;
    require_file(mixtures_path)?;
    let ckpt: DictionaryCheckpoint = geoatoms::io::load_json(dict_path)?;
    let dict = ckpt.into_dictionary()?;
    let mixtures = load_mixtures(mixtures_path)?;
    let acc = decomposition_accuracy(&dict, &mixtures)?;
    let doc = AccuracyReportDoc {
        meta: cfg.provenance(),
        per_step_accuracy: acc.per_step,
        exact_sequence_accuracy: acc.exact_sequence,
        num_samples: acc.num_samples,
    };
    match out {
        Some(path) => {
            ensure_parent_dir(path)?;
            save_json(path, &doc)?;
            eprintln!("eval-atoms: report written to {}", path.display());
        }
        None => {
            let text = serde_json::to_string_pretty(&doc)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(())
}
