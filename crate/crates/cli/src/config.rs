//! Run configuration: defaults, a line-oriented `key=value` file, and
//! command-line overrides (flags win). The resolved configuration is hashed
//! into every output artifact.

use std::fmt::Write as _;
use std::path::Path;

use geoatoms::cells::CellLevelWeights;
use geoatoms::io::Provenance;
use geoatoms::rewards::{CombineWeights, RewardConfig};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    // mixture factory
    pub dim: usize,
    pub classes: usize,
    pub block_size: usize,
    pub mixture_k: usize,
    pub clips_per_class: usize,
    pub clip_noise: f64,
    pub train_mixtures: usize,
    pub eval_mixtures: usize,
    // dictionary training
    pub atoms_epochs: usize,
    pub atoms_batch: usize,
    pub atoms_lr: f64,
    // flow model and training
    pub psi_dim: usize,
    pub flow_hidden: usize,
    pub flow_layers: usize,
    pub time_frequencies: usize,
    pub flow_epochs: usize,
    pub flow_batch: usize,
    pub flow_lr: f64,
    pub sample_steps: usize,
    pub likelihood_steps: usize,
    // synthetic geo data
    pub geo_clusters: usize,
    pub geo_points: usize,
    pub geo_eval_points: usize,
    pub geo_spread_km: f64,
    // rewards
    pub cell_levels: Vec<u8>,
    pub cell_weights: Vec<f64>,
    pub combine_geo: f64,
    pub combine_align: f64,
    pub combine_calib: f64,
    pub kl_beta: f64,
    pub group_size: usize,
    // evaluation
    pub knn_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            dim: 64,
            classes: 16,
            block_size: 4,
            mixture_k: 3,
            clips_per_class: 8,
            clip_noise: 0.05,
            train_mixtures: 20_000,
            eval_mixtures: 1000,
            atoms_epochs: 5,
            atoms_batch: 32,
            atoms_lr: 1e-4,
            psi_dim: 3,
            flow_hidden: 256,
            flow_layers: 4,
            time_frequencies: 8,
            flow_epochs: 50,
            flow_batch: 64,
            flow_lr: 1e-3,
            sample_steps: 100,
            likelihood_steps: 64,
            geo_clusters: 3,
            geo_points: 1000,
            geo_eval_points: 200,
            geo_spread_km: 150.0,
            cell_levels: vec![1, 5, 12],
            cell_weights: vec![0.2, 0.3, 0.5],
            combine_geo: 1.0,
            combine_align: 1.0,
            combine_calib: 0.1,
            kl_beta: 0.01,
            group_size: 8,
            knn_k: 3,
        }
    }
}

impl RunConfig {
    /// Load defaults, then apply a config file if given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Config(format!(
                        "{}:{}: expected key=value, got {raw:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                cfg.apply(key.trim(), value.trim()).map_err(|e| {
                    CliError::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
            }
        }
        Ok(cfg)
    }

    /// Apply one key=value pair; unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| format!("bad value for {key}: {e}"))
        }
        fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, String>
        where
            T::Err: std::fmt::Display,
        {
            value
                .split(',')
                .map(|v| parse(key, v.trim()))
                .collect()
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "block_size" => self.block_size = parse(key, value)?,
            "mixture_k" => self.mixture_k = parse(key, value)?,
            "clips_per_class" => self.clips_per_class = parse(key, value)?,
            "clip_noise" => self.clip_noise = parse(key, value)?,
            "train_mixtures" => self.train_mixtures = parse(key, value)?,
            "eval_mixtures" => self.eval_mixtures = parse(key, value)?,
            "atoms_epochs" => self.atoms_epochs = parse(key, value)?,
            "atoms_batch" => self.atoms_batch = parse(key, value)?,
            "atoms_lr" => self.atoms_lr = parse(key, value)?,
            "psi_dim" => self.psi_dim = parse(key, value)?,
            "flow_hidden" => self.flow_hidden = parse(key, value)?,
            "flow_layers" => self.flow_layers = parse(key, value)?,
            "time_frequencies" => self.time_frequencies = parse(key, value)?,
            "flow_epochs" => self.flow_epochs = parse(key, value)?,
            "flow_batch" => self.flow_batch = parse(key, value)?,
            "flow_lr" => self.flow_lr = parse(key, value)?,
            "sample_steps" => self.sample_steps = parse(key, value)?,
            "likelihood_steps" => self.likelihood_steps = parse(key, value)?,
            "geo_clusters" => self.geo_clusters = parse(key, value)?,
            "geo_points" => self.geo_points = parse(key, value)?,
            "geo_eval_points" => self.geo_eval_points = parse(key, value)?,
            "geo_spread_km" => self.geo_spread_km = parse(key, value)?,
            "cell_levels" => self.cell_levels = parse_list(key, value)?,
            "cell_weights" => self.cell_weights = parse_list(key, value)?,
            "combine_geo" => self.combine_geo = parse(key, value)?,
            "combine_align" => self.combine_align = parse(key, value)?,
            "combine_calib" => self.combine_calib = parse(key, value)?,
            "kl_beta" => self.kl_beta = parse(key, value)?,
            "group_size" => self.group_size = parse(key, value)?,
            "knn_k" => self.knn_k = parse(key, value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Canonical dump: every key, sorted, one per line.
    pub fn canonical(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("atoms_batch", self.atoms_batch.to_string()),
            ("atoms_epochs", self.atoms_epochs.to_string()),
            ("atoms_lr", self.atoms_lr.to_string()),
            ("block_size", self.block_size.to_string()),
            (
                "cell_levels",
                self.cell_levels
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "cell_weights",
                self.cell_weights
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("classes", self.classes.to_string()),
            ("clip_noise", self.clip_noise.to_string()),
            ("clips_per_class", self.clips_per_class.to_string()),
            ("combine_align", self.combine_align.to_string()),
            ("combine_calib", self.combine_calib.to_string()),
            ("combine_geo", self.combine_geo.to_string()),
            ("dim", self.dim.to_string()),
            ("eval_mixtures", self.eval_mixtures.to_string()),
            ("flow_batch", self.flow_batch.to_string()),
            ("flow_epochs", self.flow_epochs.to_string()),
            ("flow_hidden", self.flow_hidden.to_string()),
            ("flow_layers", self.flow_layers.to_string()),
            ("flow_lr", self.flow_lr.to_string()),
            ("geo_clusters", self.geo_clusters.to_string()),
            ("geo_eval_points", self.geo_eval_points.to_string()),
            ("geo_points", self.geo_points.to_string()),
            ("geo_spread_km", self.geo_spread_km.to_string()),
            ("group_size", self.group_size.to_string()),
            ("kl_beta", self.kl_beta.to_string()),
            ("knn_k", self.knn_k.to_string()),
            ("likelihood_steps", self.likelihood_steps.to_string()),
            ("mixture_k", self.mixture_k.to_string()),
            ("psi_dim", self.psi_dim.to_string()),
            ("sample_steps", self.sample_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("time_frequencies", self.time_frequencies.to_string()),
            ("train_mixtures", self.train_mixtures.to_string()),
        ];
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// FNV-1a 64 hash of the canonical dump, as hex.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.canonical().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.hash(),
            seed: self.seed,
        }
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        // flow_layers counts weight layers, so hidden count is one less
        vec![self.flow_hidden; self.flow_layers.saturating_sub(1).max(1)]
    }

    pub fn reward_config(&self) -> Result<RewardConfig, CliError> {
        if self.cell_levels.len() != self.cell_weights.len() {
            return Err(CliError::Config(
                "cell_levels and cell_weights must have the same length".into(),
            ));
        }
        let entries: Vec<(u8, f64)> = self
            .cell_levels
            .iter()
            .copied()
            .zip(self.cell_weights.iter().copied())
            .collect();
        let cell_weights = CellLevelWeights::new(entries)
            .map_err(|e| CliError::Config(format!("bad cell weights: {e}")))?;
        let cfg = RewardConfig {
            cell_weights,
            combine: CombineWeights {
                geo: self.combine_geo,
                align: self.combine_align,
                calib: self.combine_calib,
            },
            kl_beta: self.kl_beta,
            group_size: self.group_size,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(format!("bad reward config: {e}")))?;
        Ok(cfg)
    }
}
