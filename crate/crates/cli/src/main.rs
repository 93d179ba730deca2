//! Command-line pipeline: synthetic data generation, dictionary and flow
//! training, decomposition evaluation, sampling, likelihoods, rewards,
//! metrics, and heatmap export.
//!
//! Every command is deterministic under a fixed seed and configuration.
//! Exit codes: 0 on success, 2 for configuration errors (bad flags, config
//! file, or unresolvable paths), 3 for runtime or numeric errors.

mod commands;
mod config;
mod records;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl From<geoatoms::Error> for CliError {
    fn from(e: geoatoms::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Deterministic per-command RNG: one seed, distinct stream per command.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Input paths must resolve at launch; anything else is a config error.
pub fn require_file(path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "input file {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

pub fn ensure_parent_dir(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| {
                CliError::Config(format!("cannot create directory {}: {e}", dir.display()))
            })?;
        }
    }
    Ok(())
}

#[derive(Parser)]
#[command(name = "geoatoms", version, about = "Acoustic-atom geolocation toolkit")]
struct Cli {
    /// Line-oriented key=value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic clip bank, mixtures, and geo datasets.
    Factory(FactoryArgs),
    /// Train the class-partitioned dictionary on mixtures.
    TrainAtoms(TrainAtomsArgs),
    /// Measure decomposition accuracy of a dictionary on held-out mixtures.
    EvalAtoms(EvalAtomsArgs),
    /// Train the conditional flow on (location, psi) records.
    TrainFlow(TrainFlowArgs),
    /// Draw location samples from a trained flow.
    Sample(SampleArgs),
    /// Per-record log-likelihoods under a trained flow.
    Nll(NllArgs),
    /// Score rollouts with the reward stack and group advantages.
    Reward(RewardArgs),
    /// Compute the metric report from evaluation records.
    Evaluate(EvaluateArgs),
    /// Export a density heatmap as GeoJSON and CSV.
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct FactoryArgs {
    /// Output directory for the generated files.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Number of sound classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Components per mixture.
    #[arg(long)]
    k: Option<usize>,
    /// Training mixtures to generate.
    #[arg(long)]
    count: Option<usize>,
    /// Held-out mixtures to generate.
    #[arg(long)]
    eval_count: Option<usize>,
}

#[derive(Args)]
struct TrainAtomsArgs {
    /// Training mixtures JSONL.
    #[arg(long, default_value = "out/mixtures_train.jsonl")]
    mixtures: PathBuf,
    #[arg(long, default_value = "out/dictionary.json")]
    out_dict: PathBuf,
    #[arg(long, default_value = "out/atoms_loss.csv")]
    out_curve: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct EvalAtomsArgs {
    #[arg(long, default_value = "out/dictionary.json")]
    dict: PathBuf,
    /// Held-out mixtures JSONL.
    #[arg(long, default_value = "out/mixtures_eval.jsonl")]
    mixtures: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlowArgs {
    /// Training records JSONL with lat, lon, psi fields.
    #[arg(long, default_value = "out/geo_train.jsonl")]
    geo: PathBuf,
    #[arg(long, default_value = "out/flow.json")]
    out_flow: PathBuf,
    #[arg(long, default_value = "out/flow_loss.csv")]
    out_curve: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value = "out/flow.json")]
    flow: PathBuf,
    /// JSONL whose records carry psi (or frames+atoms) and optionally a
    /// truth coordinate.
    #[arg(long)]
    psi_file: Option<PathBuf>,
    /// Inline psi as comma-separated numbers; used when no file is given.
    #[arg(long, allow_hyphen_values = true)]
    psi: Option<String>,
    /// Samples per psi record.
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value = "out/samples.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct NllArgs {
    #[arg(long, default_value = "out/flow.json")]
    flow: PathBuf,
    /// Records JSONL with lat, lon, psi fields.
    #[arg(long, default_value = "out/geo_eval.jsonl")]
    records: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value = "out/nll.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct RewardArgs {
    /// Rollout records JSONL.
    #[arg(long)]
    rollouts: PathBuf,
    /// Gazetteer GeoJSON FeatureCollection with name properties.
    #[arg(long)]
    gazetteer: PathBuf,
    /// Flow checkpoint for the calibration term (needs psi in rollouts).
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long, default_value = "out/rollouts_scored.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Evaluation records JSONL (pred/truth coordinates etc).
    #[arg(long)]
    records: PathBuf,
    /// Report JSON path; stdout when omitted.
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Optional one-row CSV for experiment tracking.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long, default_value = "out/flow.json")]
    flow: PathBuf,
    /// Inline psi as comma-separated numbers.
    #[arg(long, allow_hyphen_values = true)]
    psi: Option<String>,
    /// JSONL whose first record supplies psi when no inline psi is given.
    #[arg(long)]
    psi_file: Option<PathBuf>,
    /// Grid rows (latitude bands); columns default to twice the rows.
    #[arg(long, default_value_t = 18)]
    rows: usize,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value = "out/heatmap.geojson")]
    out_geojson: PathBuf,
    #[arg(long, default_value = "out/heatmap.csv")]
    out_csv: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Factory(args) => {
            if let Some(v) = args.classes {
                cfg.classes = v;
            }
            if let Some(v) = args.dim {
                cfg.dim = v;
            }
            if let Some(v) = args.k {
                cfg.mixture_k = v;
            }
            if let Some(v) = args.count {
                cfg.train_mixtures = v;
            }
            if let Some(v) = args.eval_count {
                cfg.eval_mixtures = v;
            }
            commands::factory::run(&cfg, &args.out_dir)
        }
        Command::TrainAtoms(args) => {
            if let Some(v) = args.epochs {
                cfg.atoms_epochs = v;
            }
            if let Some(v) = args.lr {
                cfg.atoms_lr = v;
            }
            commands::atoms::train(&cfg, &args.mixtures, &args.out_dict, &args.out_curve)
        }
        Command::EvalAtoms(args) => {
            commands::atoms::eval(&cfg, &args.dict, &args.mixtures, args.out.as_deref())
        }
        Command::TrainFlow(args) => {
            if let Some(v) = args.epochs {
                cfg.flow_epochs = v;
            }
            if let Some(v) = args.lr {
                cfg.flow_lr = v;
            }
            if let Some(v) = args.hidden {
                cfg.flow_hidden = v;
            }
            commands::flow::train(&cfg, &args.geo, &args.out_flow, &args.out_curve)
        }
        Command::Sample(args) => commands::flow::sample(
            &cfg,
            &args.flow,
            args.psi_file.as_deref(),
            args.psi.as_deref(),
            args.n,
            args.steps,
            &args.out,
        ),
        Command::Nll(args) => {
            commands::flow::nll(&cfg, &args.flow, &args.records, args.steps, &args.out)
        }
        Command::Reward(args) => commands::reward::run(
            &cfg,
            &args.rollouts,
            &args.gazetteer,
            args.flow.as_deref(),
            &args.out,
        ),
        Command::Evaluate(args) => commands::evaluate::run(
            &cfg,
            &args.records,
            args.out_json.as_deref(),
            args.out_csv.as_deref(),
        ),
        Command::Heatmap(args) => commands::flow::heatmap(
            &cfg,
            &args.flow,
            args.psi.as_deref(),
            args.psi_file.as_deref(),
            args.rows,
            args.cols,
            args.steps,
            &args.out_geojson,
            &args.out_csv,
        ),
    }
}
