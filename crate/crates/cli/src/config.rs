//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use drd_opf::sim::SamplingModel;
use drd_opf::value::DEFAULT_GRID_CAP;

use crate::CliError;

pub const DEFAULT_SEED: u64 = 20240601;
pub const SWEEP_GAMMAS: [f64; 5] = [0.0, 1.0, 3.0, 5.0, 10.0];

/// Flags shared by every command that runs a case.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML configuration file; flags override its entries.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Case file.
    #[arg(long, value_name = "FILE")]
    pub case: Option<PathBuf>,

    /// Divergence radius, or a comma-separated list of radii.
    #[arg(long, value_delimiter = ',', value_name = "GAMMA[,GAMMA...]")]
    pub gamma: Option<Vec<f64>>,

    /// Interpolation pieces per generator.
    #[arg(long, value_name = "K")]
    pub pieces: Option<usize>,

    /// Histogram bins (scenarios) per stage.
    #[arg(long, value_name = "M")]
    pub bins: Option<usize>,

    /// Samples used to build the reference distribution.
    #[arg(long, value_name = "N")]
    pub n_fit: Option<usize>,

    /// Samples used to evaluate each policy.
    #[arg(long, value_name = "N")]
    pub n_eval: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,

    /// Evaluate a generation schedule frozen along the nominal path instead
    /// of the state-feedback policy.
    #[arg(long)]
    pub open_loop: bool,

    /// Keep only the first T stages of the case.
    #[arg(long, value_name = "T")]
    pub horizon: Option<usize>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
    #[default]
    None,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    name: Option<String>,
    rho: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    case: Option<PathBuf>,
    #[serde(default)]
    gamma: OneOrMany,
    pieces: Option<usize>,
    bins: Option<usize>,
    n_fit: Option<usize>,
    n_eval: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    open_loop: Option<bool>,
    horizon: Option<usize>,
    grid_cap: Option<usize>,
    #[serde(default)]
    model: ModelSection,
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case_path: Option<PathBuf>,
    pub gammas: Vec<f64>,
    pub pieces: usize,
    pub bins: usize,
    pub n_fit: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub model: SamplingModel,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub open_loop: bool,
    pub horizon: Option<usize>,
    pub grid_cap: usize,
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    let mut cfg: FileConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    // Relative paths in the file are relative to the file itself.
    let base = path.parent().unwrap_or(Path::new(""));
    if let Some(case) = cfg.case.take() {
        cfg.case = Some(if case.is_relative() { base.join(case) } else { case });
    }
    if let Some(out) = cfg.out.take() {
        cfg.out = Some(if out.is_relative() { base.join(out) } else { out });
    }
    Ok(cfg)
}

impl RunConfig {
    /// Merges defaults, the config file (if any) and flags, in increasing
    /// priority, then checks the result.
    pub fn resolve(args: &RunArgs, default_gammas: &[f64]) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => read_file_config(path)?,
            None => FileConfig::default(),
        };
        let file_gammas = match file.gamma {
            OneOrMany::One(g) => Some(vec![g]),
            OneOrMany::Many(v) => Some(v),
            OneOrMany::None => None,
        };
        let model_name = file.model.name.unwrap_or_else(|| "truncnorm".into());
        let model = SamplingModel::from_name(&model_name, file.model.rho.unwrap_or(0.0))?;

        let cfg = RunConfig {
            case_path: args.case.clone().or(file.case),
            gammas: args
                .gamma
                .clone()
                .or(file_gammas)
                .unwrap_or_else(|| default_gammas.to_vec()),
            pieces: args.pieces.or(file.pieces).unwrap_or(3),
            bins: args.bins.or(file.bins).unwrap_or(5),
            n_fit: args.n_fit.or(file.n_fit).unwrap_or(500),
            n_eval: args.n_eval.or(file.n_eval).unwrap_or(1000),
            seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            model,
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            jobs: args.jobs.or(file.jobs),
            open_loop: args.open_loop || file.open_loop.unwrap_or(false),
            horizon: args.horizon.or(file.horizon),
            grid_cap: file.grid_cap.unwrap_or(DEFAULT_GRID_CAP),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let counts = [
            ("pieces", self.pieces),
            ("bins", self.bins),
            ("n-fit", self.n_fit),
            ("n-eval", self.n_eval),
            ("grid_cap", self.grid_cap),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.jobs == Some(0) || self.horizon == Some(0) {
            return Err(CliError::Config("jobs and horizon must be at least 1".into()));
        }
        if self.gammas.is_empty() {
            return Err(CliError::Config("at least one gamma is required".into()));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(CliError::Config(format!("gamma {g} must be a nonnegative number")));
        }
        Ok(())
    }

    pub fn case_path(&self) -> Result<&Path, CliError> {
        self.case_path
            .as_deref()
            .ok_or_else(|| CliError::Config("no case given (use --case or `case` in the config file)".into()))
    }
}
