//! Generative simulation environment.
//!
//! Each participant has a fixed sequence of contexts, availability and
//! residuals. Anti-sedentary messages arrive i.i.d. with probability `p_sed`,
//! dosage follows the decayed-count recursion, and rewards are linear in the
//! standardized features plus the fixed residual.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::AlgoConfig;
use crate::error::{Error, Result};
use crate::features::{
    build_features, update_dosage, DecisionContext, FeaturePair, HistoryRecord, RawContext, Scaler,
};
use crate::learner::Learner;
use crate::selector::SelectionOutcome;

const SED_STREAM: u64 = 0;
const ACTION_STREAM: u64 = 1;

/// Context, availability and residual at one decision time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timestep {
    pub raw: RawContext,
    pub available: bool,
    pub residual: f64,
}

/// Reward coefficients of the generative model, in the `g`/`f` layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvCoefficients {
    /// Baseline at available times.
    pub alpha_avail: Vec<f64>,
    /// Treatment effect.
    pub beta: Vec<f64>,
    /// Baseline at unavailable times.
    pub alpha_unavail: Vec<f64>,
}

/// One simulated participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantEnv {
    pub user_id: u32,
    pub steps: Vec<Timestep>,
    pub coef: EnvCoefficients,
    /// Standardization the coefficients were fit under.
    pub scaler: Scaler,
    pub lambda: f64,
    pub p_sed: f64,
    pub slots_per_day: usize,
    pub extension_seed: u64,
}

/// SplitMix64 finalizer; derives independent seeds from structured keys.
pub fn mix_seed(base: u64, keys: &[u64]) -> u64 {
    let mut z = base;
    for &k in keys {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Append whole days drawn uniformly (with replacement) from `base` until the
/// sequence spans `target_days`.
pub fn extend_sequence<T: Clone, R: Rng + ?Sized>(
    base: &[T],
    slots_per_day: usize,
    target_days: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    if slots_per_day == 0 || base.is_empty() || !base.len().is_multiple_of(slots_per_day) {
        return Err(Error::InsufficientData(format!(
            "base sequence of {} steps is not a whole number of {slots_per_day}-slot days",
            base.len()
        )));
    }
    let base_days = base.len() / slots_per_day;
    let mut out = base.to_vec();
    for _ in base_days..target_days {
        let d = rng.random_range(0..base_days);
        out.extend_from_slice(&base[d * slots_per_day..(d + 1) * slots_per_day]);
    }
    out.truncate(target_days * slots_per_day);
    Ok(out)
}

/// A decision time as the learner sees it, plus what the environment needs to
/// generate the reward.
#[derive(Debug, Clone)]
pub struct Step {
    pub context: DecisionContext,
    features: FeaturePair,
    residual: f64,
    alpha: DVector<f64>,
    beta: Option<DVector<f64>>,
}

impl Step {
    /// Reward for `action`; ignores the action at unavailable times.
    pub fn reward(&self, action: bool) -> f64 {
        let base = self.features.g.dot(&self.alpha) + self.residual;
        match (&self.beta, action) {
            (Some(beta), true) => base + self.features.f.dot(beta),
            _ => base,
        }
    }
}

impl ParticipantEnv {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Decision time `t` (1-based). `sed_event` is the anti-sedentary draw
    /// between `t−1` and `t`; dosage is 0 at `t = 1`.
    pub fn step(&self, t: usize, prev_action: bool, prev_dosage: f64, sed_event: bool) -> Result<Step> {
        if t == 0 || t > self.steps.len() {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: self.steps.len(),
            });
        }
        let dosage = if t == 1 {
            0.0
        } else {
            update_dosage(prev_dosage, prev_action || sed_event, self.lambda)?
        };
        let ts = &self.steps[t - 1];
        let context = DecisionContext {
            day: (t - 1) / self.slots_per_day + 1,
            slot: (t - 1) % self.slots_per_day + 1,
            available: ts.available,
            raw: ts.raw,
            dosage,
        };
        let features = build_features(&ts.raw, dosage, &self.scaler)?;
        let (alpha, beta) = if ts.available {
            (
                DVector::from_column_slice(&self.coef.alpha_avail),
                Some(DVector::from_column_slice(&self.coef.beta)),
            )
        } else {
            (DVector::from_column_slice(&self.coef.alpha_unavail), None)
        };
        if alpha.len() != features.g.len() || beta.as_ref().is_some_and(|b| b.len() != features.f.len()) {
            return Err(Error::Dimension {
                expected: features.g.len(),
                got: alpha.len(),
            });
        }
        Ok(Step {
            context,
            features,
            residual: ts.residual,
            alpha,
            beta,
        })
    }
}

/// One logged decision with the selection details when available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub record: HistoryRecord,
    pub pre_clip: Option<f64>,
    pub eta: Option<f64>,
    /// `f^T μ_d` at selection time.
    pub effect_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user_id: u32,
    pub seed: u64,
    pub steps: Vec<TrajectoryStep>,
    pub total_reward: f64,
    pub daily_reward: Vec<f64>,
}

impl Trajectory {
    pub fn records(&self) -> Vec<HistoryRecord> {
        self.steps.iter().map(|s| s.record).collect()
    }

    pub fn actions(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.record.action).collect()
    }
}

/// The two random streams of an episode: anti-sedentary arrivals and action
/// draws. Both derive from one master seed, so the learner's draws never
/// perturb the environment's.
pub struct EpisodeRng {
    pub sed: ChaCha8Rng,
    pub action: ChaCha8Rng,
}

impl EpisodeRng {
    pub fn new(seed: u64) -> Self {
        let mut sed = ChaCha8Rng::seed_from_u64(seed);
        sed.set_stream(SED_STREAM);
        let mut action = ChaCha8Rng::seed_from_u64(seed);
        action.set_stream(ACTION_STREAM);
        Self { sed, action }
    }
}

/// Run a learner through the participant's full horizon.
pub fn run_episode(
    env: &ParticipantEnv,
    learner: &mut dyn Learner,
    cfg: &AlgoConfig,
    seed: u64,
) -> Result<Trajectory> {
    let learner = std::cell::RefCell::new(learner);
    run_episode_with(
        env,
        cfg,
        seed,
        |step, _, rng| {
            if step.context.available {
                let out = learner.borrow_mut().decide(&step.context, rng)?;
                Ok((out.pi, out.action, Some(out)))
            } else {
                Ok((0.0, false, None))
            }
        },
        |history| learner.borrow_mut().nightly(history),
    )
}

/// Replay a fixed action sequence (e.g. from a logged trajectory).
pub fn replay_actions(env: &ParticipantEnv, cfg: &AlgoConfig, seed: u64, actions: &[bool]) -> Result<Trajectory> {
    if actions.len() != env.horizon() {
        return Err(Error::Dimension {
            expected: env.horizon(),
            got: actions.len(),
        });
    }
    run_episode_with(
        env,
        cfg,
        seed,
        |step, history, _| {
            let a = actions[history.len()];
            if !step.context.available && a {
                return Err(Error::Unavailable);
            }
            let pi = if step.context.available { f64::from(u8::from(a)) } else { 0.0 };
            Ok((pi, a, None))
        },
        |_| Ok(()),
    )
}

fn run_episode_with<D, N>(
    env: &ParticipantEnv,
    cfg: &AlgoConfig,
    seed: u64,
    mut decide: D,
    mut nightly: N,
) -> Result<Trajectory>
where
    D: FnMut(&Step, &[HistoryRecord], &mut dyn rand::RngCore) -> Result<(f64, bool, Option<SelectionOutcome>)>,
    N: FnMut(&[HistoryRecord]) -> Result<()>,
{
    let horizon = env.horizon();
    if cfg.horizon() != horizon || cfg.slots_per_day != env.slots_per_day {
        return Err(Error::Config(format!(
            "config horizon {}x{} does not match environment of {} steps",
            cfg.n_days,
            cfg.slots_per_day,
            horizon
        )));
    }
    let mut rngs = EpisodeRng::new(seed);
    let mut history: Vec<HistoryRecord> = Vec::with_capacity(horizon);
    let mut steps = Vec::with_capacity(horizon);
    let mut daily = vec![0.0; horizon.div_ceil(env.slots_per_day)];
    let (mut prev_action, mut prev_dosage) = (false, 0.0);
    for t in 1..=horizon {
        let sed_event = t > 1 && rngs.sed.random_bool(env.p_sed);
        let step = env.step(t, prev_action, prev_dosage, sed_event)?;
        let (pi, action, outcome) = decide(&step, &history, &mut rngs.action)?;
        let reward = step.reward(action);
        let record = HistoryRecord::new(step.context, pi, action, reward)?;
        history.push(record);
        steps.push(TrajectoryStep {
            record,
            pre_clip: outcome.map(|o| o.pre_clip),
            eta: outcome.map(|o| o.eta_used),
            effect_mean: outcome.map(|o| o.effect_mean),
        });
        daily[step.context.day - 1] += reward;
        prev_action = action;
        prev_dosage = step.context.dosage;
        if step.context.slot == env.slots_per_day {
            nightly(&history)?;
        }
    }
    Ok(Trajectory {
        user_id: env.user_id,
        seed,
        total_reward: steps.iter().map(|s| s.record.reward).sum(),
        steps,
        daily_reward: daily,
    })
}
