//! `reward`: annotate rollouts with reward components and group-relative
//! advantages.

use std::path::Path;

use geoatoms::io::{read_jsonl, write_jsonl};
use geoatoms::parallel;
use geoatoms::rewards::{group_advantages, score_rollout, EntityGazetteer, RolloutRecord};
use geoatoms::rfm::FlowCheckpoint;

use crate::config::RunConfig;
use crate::{ensure_parent_dir, require_file, CliError};

pub fn run(
    cfg: &RunConfig,
    rollouts_path: &Path,
    gazetteer_path: &Path,
    flow_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    require_file(rollouts_path)?;
    require_file(gazetteer_path)?;
    if let Some(p) = flow_path {
        require_file(p)?;
    }
    ensure_parent_dir(out)?;

    let reward_cfg = cfg.reward_config()?;
    let gazetteer = EntityGazetteer::from_geojson_file(gazetteer_path)?;
    let flow = match flow_path {
        Some(p) => {
            let ckpt: FlowCheckpoint = geoatoms::io::load_json(p)?;
            Some(ckpt.into_model()?)
        }
        None => None,
    };

    let rollouts: Vec<RolloutRecord> = read_jsonl(rollouts_path)?;
    if rollouts.is_empty() {
        return Err(CliError::Runtime("no rollouts to score".into()));
    }
    if !rollouts.len().is_multiple_of(reward_cfg.group_size) {
        return Err(CliError::Runtime(format!(
            "{} rollouts do not divide into groups of {}",
            rollouts.len(),
            reward_cfg.group_size
        )));
    }

    let flow_arg = flow.as_ref().map(|m| (m, cfg.likelihood_steps));
    let scored = parallel::map(&rollouts, |r| {
        score_rollout(r, &reward_cfg, &gazetteer, flow_arg)
    });
    let mut scored: Vec<RolloutRecord> = scored
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(CliError::from)?;

    for group in scored.chunks_mut(reward_cfg.group_size) {
        let totals: Vec<f64> = group.iter().map(|r| r.total.unwrap_or(0.0)).collect();
        for (rec, adv) in group.iter_mut().zip(group_advantages(&totals)) {
            rec.advantage = Some(adv);
        }
    }

    write_jsonl(out, &cfg.provenance(), scored.iter())?;
    eprintln!(
        "reward: {} rollouts in groups of {} (beta={}) -> {}",
        scored.len(),
        reward_cfg.group_size,
        reward_cfg.kl_beta,
        out.display()
    );
    Ok(())
}
