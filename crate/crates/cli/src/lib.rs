//! Command-line driver: argument types, command execution and run manifests.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dosage_ts::experiment::{DEFAULT_FOLDS, DEFAULT_REPS};
use dosage_ts::AlgoConfig;

mod commands;
pub mod manifest;
pub mod output;

pub use commands::Bundle;
pub use manifest::RunManifest;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "dosage-ts", version, about = "Dosage-aware Thompson sampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Generate a synthetic pilot corpus.
    GenCorpus(GenCorpusArgs),
    /// Fit priors, noise variance and starting tables from a corpus.
    Calibrate(CalibrateArgs),
    /// Grid-search (γ, w) on environments built from a corpus.
    Tune(TuneArgs),
    /// Cross-validated comparison against the bandit baseline.
    Evaluate(EvaluateArgs),
    /// Run one participant episode and log the trajectory.
    Simulate(SimulateArgs),
    /// Re-run a recorded command and check its outputs are identical.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CommonArgs {
    /// Algorithm settings (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long)]
    pub seed: u64,
    /// Worker threads; all cores when omitted. Results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenCorpusArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Generator parameters (JSON).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub participants: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Bundle written by `calibrate`.
    #[arg(long)]
    pub calibration: PathBuf,
    /// Replications per participant per grid cell.
    #[arg(long, default_value_t = DEFAULT_REPS)]
    pub reps: usize,
    /// Comma-separated γ grid; the default grid when omitted.
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<f64>,
    /// Comma-separated w grid; the default grid when omitted.
    #[arg(long, value_delimiter = ',')]
    pub ws: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// Proposed algorithm tuned on each training batch.
    Tuned,
    /// Proposed algorithm at fixed `--gamma`/`--w`.
    Proposed,
    /// Bandit against itself; every improvement is zero.
    Bandit,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    /// Test replications per participant per arm.
    #[arg(long, default_value_t = DEFAULT_REPS)]
    pub reps: usize,
    /// Grid-search replications; `--reps` when omitted.
    #[arg(long)]
    pub tune_reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub ws: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Arm::Tuned)]
    pub arm: Arm,
    /// γ for `--arm proposed`; the config value when omitted.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// w for `--arm proposed`; the config value when omitted.
    #[arg(long)]
    pub w: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmChoice {
    Proposed,
    Bandit,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    /// Participant id from the corpus.
    #[arg(long)]
    pub user: u32,
    #[arg(long, value_enum, default_value_t = AlgorithmChoice::Proposed)]
    pub algorithm: AlgorithmChoice,
    /// Defaults to the bundle's tuned value, then the config.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub w: Option<f64>,
    /// Replication index; picks the episode seed.
    #[arg(long, default_value_t = 0)]
    pub rep: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest of the run to reproduce.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for the reproduced outputs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus(_) => "gen-corpus",
            Command::Calibrate(_) => "calibrate",
            Command::Tune(_) => "tune",
            Command::Evaluate(_) => "evaluate",
            Command::Simulate(_) => "simulate",
            Command::Replay(_) => "replay",
        }
    }

    pub fn common(&self) -> Option<&CommonArgs> {
        match self {
            Command::GenCorpus(a) => Some(&a.common),
            Command::Calibrate(a) => Some(&a.common),
            Command::Tune(a) => Some(&a.common),
            Command::Evaluate(a) => Some(&a.common),
            Command::Simulate(a) => Some(&a.common),
            Command::Replay(_) => None,
        }
    }

    fn common_mut(&mut self) -> Option<&mut CommonArgs> {
        match self {
            Command::GenCorpus(a) => Some(&mut a.common),
            Command::Calibrate(a) => Some(&mut a.common),
            Command::Tune(a) => Some(&mut a.common),
            Command::Evaluate(a) => Some(&mut a.common),
            Command::Simulate(a) => Some(&mut a.common),
            Command::Replay(_) => None,
        }
    }

    /// Data files read by the command, keyed by role. The config is
    /// recorded separately as a snapshot.
    pub fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut inputs = Vec::new();
        match self {
            Command::GenCorpus(a) => {
                if let Some(p) = &a.spec {
                    inputs.push(("spec", p.as_path()));
                }
            }
            Command::Calibrate(a) => inputs.push(("corpus", a.corpus.as_path())),
            Command::Tune(a) => {
                inputs.push(("corpus", a.corpus.as_path()));
                inputs.push(("calibration", a.calibration.as_path()));
            }
            Command::Evaluate(a) => inputs.push(("corpus", a.corpus.as_path())),
            Command::Simulate(a) => {
                inputs.push(("corpus", a.corpus.as_path()));
                inputs.push(("calibration", a.calibration.as_path()));
            }
            Command::Replay(a) => inputs.push(("manifest", a.manifest.as_path())),
        }
        inputs
    }

    /// Rewrite every path as absolute so a manifest can be replayed from anywhere.
    pub fn absolutize(&mut self) -> Result<()> {
        fn abs(p: &mut PathBuf) -> Result<()> {
            *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
            Ok(())
        }
        if let Some(c) = self.common_mut() {
            abs(&mut c.out)?;
            if let Some(p) = c.config.as_mut() {
                abs(p)?;
            }
        }
        match self {
            Command::GenCorpus(a) => {
                if let Some(p) = a.spec.as_mut() {
                    abs(p)?;
                }
            }
            Command::Calibrate(a) => abs(&mut a.corpus)?,
            Command::Tune(a) => {
                abs(&mut a.corpus)?;
                abs(&mut a.calibration)?;
            }
            Command::Evaluate(a) => abs(&mut a.corpus)?,
            Command::Simulate(a) => {
                abs(&mut a.corpus)?;
                abs(&mut a.calibration)?;
            }
            Command::Replay(a) => {
                abs(&mut a.manifest)?;
                abs(&mut a.out)?;
            }
        }
        Ok(())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_config(path: Option<&Path>) -> Result<Option<AlgoConfig>> {
    let Some(path) = path else { return Ok(None) };
    let cfg: AlgoConfig = read_json(path)?;
    cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
    Ok(Some(cfg))
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        builder = builder.num_threads(j);
    }
    Ok(builder.build()?)
}

/// Execute a parsed command line. `argv` is recorded in the manifest.
pub fn run(mut command: Command, argv: Vec<String>) -> Result<RunManifest> {
    command.absolutize()?;
    if let Command::Replay(args) = &command {
        return manifest::replay(args);
    }
    let common = command.common().expect("non-replay commands carry common args");
    let file_config = load_config(common.config.as_deref())?;
    manifest::execute(command, argv, file_config, None)
}
