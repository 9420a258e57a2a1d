use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dosage_ts::calibration::{build_envs, group_participants, BatchFit, Calibration, ParticipantData};
use dosage_ts::corpus::{read_corpus, write_corpus, CorpusRow, CorpusSpec};
use dosage_ts::env::{mix_seed, ParticipantEnv};
use dosage_ts::experiment::{
    cross_validate, grid_search, CvOptions, CvSummary, FoldReport, LearnerFactory, TreatmentArm, TuningResult,
    GAMMA_GRID, W_GRID,
};
use dosage_ts::{AlgoConfig, Algorithm};

use crate::output::{count_rows, read_improvements, write_improvements, write_trajectory, TRAJECTORY_COLUMNS};
use crate::{
    read_json, AlgorithmChoice, Arm, CalibrateArgs, Command, EvaluateArgs, GenCorpusArgs, SimulateArgs, TuneArgs,
};

pub const CORPUS_FILE: &str = "corpus.csv";
pub const CORPUS_SPEC_FILE: &str = "corpus_spec.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const TUNING_FILE: &str = "tuning.json";
pub const IMPROVEMENTS_FILE: &str = "improvements.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAJECTORY_DIR: &str = "trajectories";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EPISODE_FILE: &str = "episode.json";

const SIMULATE_TAG: u64 = 0x51;

/// Calibration output plus, after `tune`, the grid-search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    pub calibration: Calibration,
    #[serde(default)]
    pub tuning: Option<TuningResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub arm: Arm,
    pub options: CvOptions,
    pub summary: CvSummary,
    pub folds: Vec<FoldReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub user_id: u32,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub total_reward: f64,
    pub daily_reward: Vec<f64>,
}

pub(crate) struct Executed {
    pub config: AlgoConfig,
    /// Paths relative to the output directory, in write order.
    pub outputs: Vec<String>,
}

pub(crate) fn dispatch(command: &Command, file_config: Option<AlgoConfig>, out: &Path) -> Result<Executed> {
    log::info!("running {}", command.name());
    match command {
        Command::GenCorpus(a) => gen_corpus(a, file_config, out),
        Command::Calibrate(a) => calibrate(a, file_config, out),
        Command::Tune(a) => tune(a, file_config, out),
        Command::Evaluate(a) => evaluate(a, file_config, out),
        Command::Simulate(a) => simulate(a, file_config, out),
        Command::Replay(_) => bail!("replay cannot be nested"),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Write, then parse back and re-serialize, so a zero exit means readable
/// outputs. Text is compared because fit residuals are not serialized.
fn write_json_checked<T>(out: &Path, rel: &str, value: &T) -> Result<String>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let path = out.join(rel);
    write_json(&path, value)?;
    let back: T = read_json(&path)?;
    if serde_json::to_string(&back)? != serde_json::to_string(value)? {
        bail!("{} does not round-trip", path.display());
    }
    Ok(rel.to_string())
}

fn load_corpus(path: &Path) -> Result<Vec<CorpusRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_corpus(file).with_context(|| format!("reading corpus {}", path.display()))
}

/// Commands that start from a bundle take its settings; a `--config` given
/// alongside must agree on everything except the fitted noise variance.
fn bundle_config(bundle: &Bundle, file_config: Option<AlgoConfig>) -> Result<AlgoConfig> {
    let cfg = bundle.calibration.config.clone();
    if let Some(mut given) = file_config {
        given.sigma2 = cfg.sigma2;
        if given != cfg {
            bail!("--config disagrees with the settings stored in the calibration bundle");
        }
    }
    Ok(cfg)
}

/// Participants, the full-corpus fit and its environments, checked against
/// the bundle so tuning and simulation use the scaling the priors were fit on.
fn corpus_envs(
    corpus: &Path,
    bundle: &Bundle,
    cfg: &AlgoConfig,
    seed: u64,
) -> Result<(Vec<ParticipantData>, Vec<ParticipantEnv>)> {
    let rows = load_corpus(corpus)?;
    let data = group_participants(&rows, cfg)?;
    let batch = BatchFit::fit(&data, cfg)?;
    if batch.scaler != bundle.calibration.scaler {
        bail!("calibration bundle was not fit on {}", corpus.display());
    }
    let envs = build_envs(&data, &batch, cfg, seed)?;
    Ok((data, envs))
}

fn grid_or_default(values: &[f64], default: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        default.to_vec()
    } else {
        values.to_vec()
    }
}

fn gen_corpus(a: &GenCorpusArgs, file_config: Option<AlgoConfig>, out: &Path) -> Result<Executed> {
    let cfg = file_config.unwrap_or_default();
    let mut spec: CorpusSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => CorpusSpec {
            lambda: cfg.lambda,
            slots_per_day: cfg.slots_per_day,
            ..CorpusSpec::default()
        },
    };
    if spec.lambda != cfg.lambda || spec.slots_per_day != cfg.slots_per_day {
        bail!("corpus spec and config disagree on lambda or slots per day");
    }
    if let Some(n) = a.participants {
        spec.n_participants = n;
    }
    if let Some(d) = a.days {
        spec.n_days = d;
    }
    spec.validate()?;
    let rows = spec.generate(a.common.seed)?;

    let path = out.join(CORPUS_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    write_corpus(&rows, &mut w)?;
    drop(w);
    let back = load_corpus(&path)?;
    if back.len() != spec.n_participants * spec.n_days * spec.slots_per_day {
        bail!("{} has {} rows", path.display(), back.len());
    }
    let spec_file = write_json_checked(out, CORPUS_SPEC_FILE, &spec)?;
    log::info!("{} participants, {} rows", spec.n_participants, back.len());
    Ok(Executed {
        config: cfg,
        outputs: vec![CORPUS_FILE.to_string(), spec_file],
    })
}

fn calibrate(a: &CalibrateArgs, file_config: Option<AlgoConfig>, out: &Path) -> Result<Executed> {
    let cfg = file_config.unwrap_or_default();
    let rows = load_corpus(&a.corpus)?;
    let data = group_participants(&rows, &cfg)?;
    let calibration = Calibration::fit(&data, &cfg, &GAMMA_GRID)?;
    if !calibration.skipped_participants.is_empty() {
        log::warn!("no person fit for participants {:?}", calibration.skipped_participants);
    }
    log::info!("sigma2 = {:.4}, p_avail = {:.3}", calibration.sigma2, calibration.p_avail);
    let config = calibration.config.clone();
    let bundle = Bundle {
        calibration,
        tuning: None,
    };
    let file = write_json_checked(out, CALIBRATION_FILE, &bundle)?;
    Ok(Executed {
        config,
        outputs: vec![file],
    })
}

fn tune(a: &TuneArgs, file_config: Option<AlgoConfig>, out: &Path) -> Result<Executed> {
    let mut bundle: Bundle = read_json(&a.calibration)?;
    let cfg = bundle_config(&bundle, file_config)?;
    let (_, envs) = corpus_envs(&a.corpus, &bundle, &cfg, a.common.seed)?;
    let gammas = grid_or_default(&a.gammas, &GAMMA_GRID);
    let ws = grid_or_default(&a.ws, &W_GRID);
    let factory = LearnerFactory::new(&bundle.calibration)?;
    let result = grid_search(&factory, &envs, &gammas, &ws, a.reps, a.common.seed)?;
    log::info!("best gamma = {}, w = {}", result.best_gamma, result.best_w);

    let tuning_file = write_json_checked(out, TUNING_FILE, &result)?;
    bundle.tuning = Some(result);
    let bundle_file = write_json_checked(out, CALIBRATION_FILE, &bundle)?;
    Ok(Executed {
        config: cfg,
        outputs: vec![tuning_file, bundle_file],
    })
}

fn evaluate(a: &EvaluateArgs, file_config: Option<AlgoConfig>, out: &Path) -> Result<Executed> {
    let cfg = file_config.unwrap_or_default();
    let rows = load_corpus(&a.corpus)?;
    let treatment = match a.arm {
        Arm::Tuned => TreatmentArm::Tuned,
        Arm::Proposed => TreatmentArm::Fixed {
            algorithm: Algorithm::Proposed {
                gamma: a.gamma.unwrap_or(cfg.gamma),
                w: a.w.unwrap_or(cfg.w),
            },
        },
        Arm::Bandit => TreatmentArm::Fixed {
            algorithm: Algorithm::Bandit,
        },
    };
    let options = CvOptions {
        folds: a.folds,
        reps: a.reps,
        tune_reps: a.tune_reps.unwrap_or(a.reps),
        gammas: grid_or_default(&a.gammas, &GAMMA_GRID),
        ws: grid_or_default(&a.ws, &W_GRID),
        treatment,
        keep_trajectories: true,
    };
    let report = cross_validate(&rows, &cfg, &options, a.common.seed)?;
    let s = &report.summary;
    log::info!(
        "mean improvement {:.4} (se {:.4}), {}/{} improved, p = {:.3e}",
        s.mean_improvement,
        s.se_improvement,
        s.n_improved,
        s.n_participants,
        s.p_value
    );

    let mut outputs = Vec::new();
    let path = out.join(IMPROVEMENTS_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    write_improvements(&report.improvements, &mut w)?;
    drop(w);
    if read_improvements(File::open(&path)?)?.len() != report.improvements.len() {
        bail!("{} is incomplete", path.display());
    }
    outputs.push(IMPROVEMENTS_FILE.to_string());

    std::fs::create_dir_all(out.join(TRAJECTORY_DIR))?;
    for pair in &report.trajectories {
        for (arm, traj) in [("treatment", &pair.treatment), ("bandit", &pair.bandit)] {
            let rel = format!("{TRAJECTORY_DIR}/user_{}_{arm}.csv", pair.user_id);
            let path = out.join(&rel);
            let mut w = BufWriter::new(File::create(&path)?);
            write_trajectory(traj, &mut w)?;
            drop(w);
            if count_rows(File::open(&path)?, &TRAJECTORY_COLUMNS)? != traj.steps.len() {
                bail!("{} is incomplete", path.display());
            }
            outputs.push(rel);
        }
    }

    let summary = EvaluationSummary {
        arm: a.arm,
        options,
        summary: report.summary,
        folds: report.folds,
    };
    outputs.push(write_json_checked(out, SUMMARY_FILE, &summary)?);
    Ok(Executed { config: cfg, outputs })
}

fn simulate(a: &SimulateArgs, file_config: Option<AlgoConfig>, out: &Path) -> Result<Executed> {
    let bundle: Bundle = read_json(&a.calibration)?;
    let cfg = bundle_config(&bundle, file_config)?;
    let (_, envs) = corpus_envs(&a.corpus, &bundle, &cfg, a.common.seed)?;
    let Some(env) = envs.iter().find(|e| e.user_id == a.user) else {
        bail!("participant {} is not in the corpus", a.user);
    };
    let algorithm = match a.algorithm {
        AlgorithmChoice::Bandit => Algorithm::Bandit,
        AlgorithmChoice::Proposed => {
            let tuned = bundle.tuning.as_ref();
            Algorithm::Proposed {
                gamma: a.gamma.or(tuned.map(|t| t.best_gamma)).unwrap_or(cfg.gamma),
                w: a.w.or(tuned.map(|t| t.best_w)).unwrap_or(cfg.w),
            }
        }
    };
    let seed = mix_seed(a.common.seed, &[SIMULATE_TAG, u64::from(a.user), a.rep]);
    let factory = LearnerFactory::new(&bundle.calibration)?;
    let traj = factory.run(env, algorithm, seed)?;
    log::info!("participant {} total reward {:.3}", a.user, traj.total_reward);

    let path = out.join(TRAJECTORY_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    write_trajectory(&traj, &mut w)?;
    drop(w);
    if count_rows(File::open(&path)?, &TRAJECTORY_COLUMNS)? != traj.steps.len() {
        bail!("{} is incomplete", path.display());
    }
    let episode = EpisodeSummary {
        user_id: a.user,
        algorithm,
        seed,
        total_reward: traj.total_reward,
        daily_reward: traj.daily_reward,
    };
    let episode_file = write_json_checked(out, EPISODE_FILE, &episode)?;
    Ok(Executed {
        config: cfg,
        outputs: vec![TRAJECTORY_FILE.to_string(), episode_file],
    })
}
