//! Simulation experiments: the (γ, w) grid search on training environments
//! and k-fold cross-validation against the bandit comparator.
//!
//! Episode seeds depend only on (participant, replication), never on the grid
//! cell or the arm, so every comparison uses common random numbers. Episodes
//! run in parallel; results are reduced in a fixed order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::belief::GaussianBelief;
use crate::calibration::{build_envs, group_participants, BatchFit, Calibration, ParticipantData};
use crate::config::AlgoConfig;
use crate::corpus::CorpusRow;
use crate::env::{mix_seed, run_episode, ParticipantEnv, Trajectory};
use crate::error::{Error, Result};
use crate::learner::{Algorithm, BanditLearner, Learner, ProposedLearner};
use crate::posterior::JointPrior;
use crate::proxy::DosageKernel;

pub const GAMMA_GRID: [f64; 6] = [0.0, 0.25, 0.5, 0.75, 0.9, 0.95];
pub const W_GRID: [f64; 6] = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_REPS: usize = 96;
pub const DEFAULT_FOLDS: usize = 3;

const TUNE_TAG: u64 = 0x7E;
const EVAL_TAG: u64 = 0xE1;
const FOLD_TAG: u64 = 0xF0;

/// Builds fresh learners from one calibration.
pub struct LearnerFactory<'a> {
    cal: &'a Calibration,
    kernel: DosageKernel,
    prior: JointPrior,
    prior_unavail: GaussianBelief,
}

impl<'a> LearnerFactory<'a> {
    pub fn new(cal: &'a Calibration) -> Result<Self> {
        Ok(Self {
            kernel: DosageKernel::for_config(&cal.config)?,
            prior: cal.prior.joint()?,
            prior_unavail: cal.prior_unavail.baseline()?,
            cal,
        })
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.cal.config
    }

    pub fn build(&self, alg: Algorithm) -> Result<Box<dyn Learner>> {
        Ok(match alg {
            Algorithm::Proposed { gamma, w } => Box::new(ProposedLearner::new(
                self.cal.config.with_tuning(gamma, w),
                self.cal.scaler.clone(),
                &self.prior,
                &self.prior_unavail,
                self.cal.h1(gamma)?.clone(),
                self.kernel.clone(),
            )?),
            Algorithm::Bandit => Box::new(BanditLearner::new(
                self.cal.config.clone(),
                self.cal.scaler.clone(),
                &self.prior,
            )?),
        })
    }

    /// One episode of `alg` on `env`.
    pub fn run(&self, env: &ParticipantEnv, alg: Algorithm, seed: u64) -> Result<Trajectory> {
        let mut learner = self.build(alg)?;
        run_episode(env, learner.as_mut(), &self.cal.config, seed)
    }
}

/// Grid-search output: mean total reward per (γ, w) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub gammas: Vec<f64>,
    pub ws: Vec<f64>,
    /// `mean_reward[i][j]` for `gammas[i]`, `ws[j]`; participants weighted equally.
    pub mean_reward: Vec<Vec<f64>>,
    pub reps: usize,
    pub n_envs: usize,
    pub best_gamma: f64,
    pub best_w: f64,
}

impl TuningResult {
    pub fn best(&self) -> Algorithm {
        Algorithm::Proposed {
            gamma: self.best_gamma,
            w: self.best_w,
        }
    }
}

/// Run the proposed algorithm `reps` times per environment for every grid
/// cell and return the argmax of the average total reward. Ties go to the
/// larger γ, then the larger w.
pub fn grid_search(
    factory: &LearnerFactory<'_>,
    envs: &[ParticipantEnv],
    gammas: &[f64],
    ws: &[f64],
    reps: usize,
    seed: u64,
) -> Result<TuningResult> {
    if envs.is_empty() || gammas.is_empty() || ws.is_empty() || reps == 0 {
        return Err(Error::InsufficientData(
            "grid search needs environments, grid points and at least one replication".into(),
        ));
    }
    let cells: Vec<(usize, usize)> = (0..gammas.len())
        .flat_map(|i| (0..ws.len()).map(move |j| (i, j)))
        .collect();
    let jobs: Vec<(usize, usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..envs.len()).flat_map(move |e| (0..reps).map(move |r| (c, e, r))))
        .collect();
    let totals: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, e, r)| {
            let (i, j) = cells[c];
            let env = &envs[e];
            let alg = Algorithm::Proposed {
                gamma: gammas[i],
                w: ws[j],
            };
            let episode_seed = mix_seed(seed, &[TUNE_TAG, u64::from(env.user_id), r as u64]);
            factory.run(env, alg, episode_seed).map(|t| t.total_reward).map_err(|err| {
                Error::Config(format!(
                    "grid cell (gamma {}, w {}) participant {} rep {r}: {err}",
                    gammas[i], ws[j], env.user_id
                ))
            })
        })
        .collect::<Result<_>>()?;

    let per_cell = envs.len() * reps;
    let mut mean_reward = vec![vec![0.0; ws.len()]; gammas.len()];
    for (c, &(i, j)) in cells.iter().enumerate() {
        let block = &totals[c * per_cell..(c + 1) * per_cell];
        let env_means: Vec<f64> = block
            .chunks(reps)
            .map(|r| r.iter().sum::<f64>() / reps as f64)
            .collect();
        mean_reward[i][j] = env_means.iter().sum::<f64>() / envs.len() as f64;
    }
    let mut best = (0, 0);
    for &(i, j) in &cells {
        let (bi, bj) = best;
        let better = mean_reward[i][j] > mean_reward[bi][bj]
            || (mean_reward[i][j] == mean_reward[bi][bj]
                && (gammas[i], ws[j]) > (gammas[bi], ws[bj]));
        if better {
            best = (i, j);
        }
    }
    Ok(TuningResult {
        gammas: gammas.to_vec(),
        ws: ws.to_vec(),
        mean_reward,
        reps,
        n_envs: envs.len(),
        best_gamma: gammas[best.0],
        best_w: ws[best.1],
    })
}

/// Which algorithm plays against the bandit in cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TreatmentArm {
    /// Proposed algorithm with (γ, w) tuned on each training batch.
    Tuned,
    /// A fixed algorithm; `Fixed(Bandit)` is the null comparison.
    Fixed { algorithm: Algorithm },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvOptions {
    pub folds: usize,
    /// Replications per participant per arm at test time.
    pub reps: usize,
    /// Replications per environment in each grid-search cell.
    pub tune_reps: usize,
    pub gammas: Vec<f64>,
    pub ws: Vec<f64>,
    pub treatment: TreatmentArm,
    /// Keep replication-0 trajectories of both arms.
    pub keep_trajectories: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            reps: DEFAULT_REPS,
            tune_reps: DEFAULT_REPS,
            gammas: GAMMA_GRID.to_vec(),
            ws: W_GRID.to_vec(),
            treatment: TreatmentArm::Tuned,
            keep_trajectories: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantImprovement {
    pub user_id: u32,
    pub fold: usize,
    pub treatment_mean: f64,
    pub bandit_mean: f64,
    pub improvement_mean: f64,
    /// Standard error of the mean paired difference over replications.
    pub improvement_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_users: Vec<u32>,
    pub tuning: Option<TuningResult>,
    pub treatment: Algorithm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub n_participants: usize,
    pub mean_improvement: f64,
    pub se_improvement: f64,
    pub n_improved: usize,
    pub t_statistic: f64,
    /// One-sided paired t-test of mean improvement > 0.
    pub p_value: f64,
}

/// Replication-0 episodes of both arms for one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub user_id: u32,
    pub treatment: Trajectory,
    pub bandit: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub improvements: Vec<ParticipantImprovement>,
    pub folds: Vec<FoldReport>,
    pub summary: CvSummary,
    #[serde(skip)]
    pub trajectories: Vec<TrajectoryPair>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One-sided paired t-test across participants.
pub fn summarize(improvements: &[f64]) -> Result<CvSummary> {
    if improvements.len() < 2 {
        return Err(Error::InsufficientData("t-test needs at least 2 participants".into()));
    }
    let (mean, se) = mean_and_se(improvements);
    let n = improvements.len();
    let (t, p) = if se > 0.0 {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map_err(|e| Error::Config(format!("t distribution: {e}")))?;
        (t, 1.0 - dist.cdf(t))
    } else if mean > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(CvSummary {
        n_participants: n,
        mean_improvement: mean,
        se_improvement: se,
        n_improved: improvements.iter().filter(|&&d| d > 0.0).count(),
        t_statistic: t,
        p_value: p,
    })
}

/// Seeded participant shuffle, then round-robin fold assignment.
pub fn assign_folds(users: &[u32], folds: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    if folds < 2 || users.len() < folds {
        return Err(Error::InsufficientData(format!(
            "{} participants cannot fill {folds} folds",
            users.len()
        )));
    }
    let mut order = users.to_vec();
    order.sort_unstable();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, &[FOLD_TAG])));
    let mut out = vec![Vec::new(); folds];
    for (k, u) in order.into_iter().enumerate() {
        out[k % folds].push(u);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// k-fold cross-validation of the treatment arm against the bandit.
pub fn cross_validate(rows: &[CorpusRow], cfg: &AlgoConfig, opts: &CvOptions, seed: u64) -> Result<CvReport> {
    cfg.validate()?;
    if opts.reps == 0 {
        return Err(Error::Config("reps must be positive".into()));
    }
    let data = group_participants(rows, cfg)?;
    let users: Vec<u32> = data.iter().map(|p| p.user_id).collect();
    let folds = assign_folds(&users, opts.folds, seed)?;

    let mut improvements = Vec::with_capacity(data.len());
    let mut reports = Vec::with_capacity(folds.len());
    let mut trajectories = Vec::new();
    for (k, test_users) in folds.iter().enumerate() {
        let (test, train): (Vec<ParticipantData>, Vec<ParticipantData>) =
            data.iter().cloned().partition(|p| test_users.contains(&p.user_id));
        log::info!("fold {k}: {} training, {} test participants", train.len(), test.len());

        let gammas: Vec<f64> = match opts.treatment {
            TreatmentArm::Tuned => opts.gammas.clone(),
            TreatmentArm::Fixed {
                algorithm: Algorithm::Proposed { gamma, .. },
            } => vec![gamma],
            TreatmentArm::Fixed { .. } => Vec::new(),
        };
        let train_batch = BatchFit::fit(&train, cfg)?;
        let cal = Calibration::from_batch(&train_batch, &train, cfg, &gammas)?;
        let factory = LearnerFactory::new(&cal)?;

        let (treatment, tuning) = match opts.treatment {
            TreatmentArm::Tuned => {
                let train_envs = build_envs(&train, &train_batch, cfg, seed)?;
                let tuning = grid_search(&factory, &train_envs, &opts.gammas, &opts.ws, opts.tune_reps, seed)?;
                log::info!(
                    "fold {k}: tuned gamma {} w {}",
                    tuning.best_gamma,
                    tuning.best_w
                );
                (tuning.best(), Some(tuning))
            }
            TreatmentArm::Fixed { algorithm } => (algorithm, None),
        };

        let test_batch = BatchFit::fit(&test, cfg)?;
        let test_envs = build_envs(&test, &test_batch, cfg, seed)?;
        let jobs: Vec<(usize, usize)> = (0..test_envs.len())
            .flat_map(|e| (0..opts.reps).map(move |r| (e, r)))
            .collect();
        let runs: Vec<(Trajectory, Trajectory)> = jobs
            .par_iter()
            .map(|&(e, r)| {
                let env = &test_envs[e];
                let s = mix_seed(seed, &[EVAL_TAG, u64::from(env.user_id), r as u64]);
                Ok((factory.run(env, treatment, s)?, factory.run(env, Algorithm::Bandit, s)?))
            })
            .collect::<Result<_>>()?;

        for (e, env) in test_envs.iter().enumerate() {
            let block = &runs[e * opts.reps..(e + 1) * opts.reps];
            let diffs: Vec<f64> = block
                .iter()
                .map(|(t, b)| t.total_reward - b.total_reward)
                .collect();
            let (improvement_mean, improvement_se) = mean_and_se(&diffs);
            let reps = opts.reps as f64;
            improvements.push(ParticipantImprovement {
                user_id: env.user_id,
                fold: k,
                treatment_mean: block.iter().map(|(t, _)| t.total_reward).sum::<f64>() / reps,
                bandit_mean: block.iter().map(|(_, b)| b.total_reward).sum::<f64>() / reps,
                improvement_mean,
                improvement_se,
            });
            if opts.keep_trajectories {
                trajectories.push(TrajectoryPair {
                    user_id: env.user_id,
                    treatment: block[0].0.clone(),
                    bandit: block[0].1.clone(),
                });
            }
        }
        reports.push(FoldReport {
            fold: k,
            test_users: test_users.clone(),
            tuning,
            treatment,
        });
    }
    improvements.sort_by_key(|i| i.user_id);
    trajectories.sort_by_key(|t| t.user_id);
    let summary = summarize(&improvements.iter().map(|i| i.improvement_mean).collect::<Vec<_>>())?;
    Ok(CvReport {
        improvements,
        folds: reports,
        summary,
        trajectories,
    })
}
