//! Online learners: the dosage-aware action-centered algorithm and the
//! Thompson-sampling bandit comparator.
//!
//! Both see only the history log. `nightly` consumes records appended since
//! the previous call, so the posterior after day `d` equals the batch
//! posterior over days `1..=d`.

use nalgebra::DVector;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::baselines::{bandit_feature, bandit_prior, bandit_prob};
use crate::belief::{ConjugateRegression, GaussianBelief};
use crate::config::AlgoConfig;
use crate::error::{Error, Result};
use crate::features::{
    build_features, clip_probability, DecisionContext, HistoryRecord, Scaler, StandardizedContext,
    DOSAGE,
};
use crate::posterior::{extract_beta, joint_feature, JointPrior};
use crate::proxy::{
    blend_and_eta, marginal_rewards_from_mean, ContextMean, DosageKernel, FutureValue,
    ProxyTables, RewardCoefficients,
};
use crate::selector::{bernoulli, select_action, SelectionOutcome};

/// Decision rule plus nightly update.
pub trait Learner {
    /// Selection at an available decision time.
    fn decide(&mut self, ctx: &DecisionContext, rng: &mut dyn RngCore) -> Result<SelectionOutcome>;

    /// End-of-day update from the full history so far.
    fn nightly(&mut self, history: &[HistoryRecord]) -> Result<()>;
}

/// Which algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Algorithm {
    Proposed { gamma: f64, w: f64 },
    Bandit,
}

/// Dosage-aware action-centered Thompson sampling.
pub struct ProposedLearner {
    cfg: AlgoConfig,
    scaler: Scaler,
    kernel: DosageKernel,
    h1: FutureValue,
    joint: ConjugateRegression,
    unavail: ConjugateRegression,
    contexts: ContextMean,
    available: usize,
    consumed: usize,
    g_dim: usize,
    f_dim: usize,
    beta: GaussianBelief,
    tables: ProxyTables,
}

impl ProposedLearner {
    pub fn new(
        cfg: AlgoConfig,
        scaler: Scaler,
        prior: &JointPrior,
        prior_unavail: &GaussianBelief,
        h1: FutureValue,
        kernel: DosageKernel,
    ) -> Result<Self> {
        cfg.validate()?;
        if h1.grid != *kernel.grid() {
            return Err(Error::GridMismatch("H1 grid differs from kernel grid".into()));
        }
        let tables = ProxyTables::initial(&h1, cfg.gamma)?;
        Ok(Self {
            joint: ConjugateRegression::new(prior.to_belief(), cfg.sigma2)?,
            unavail: ConjugateRegression::new(prior_unavail.clone(), cfg.sigma2)?,
            beta: prior.effect.clone(),
            g_dim: prior.g_dim(),
            f_dim: prior.f_dim(),
            contexts: ContextMean::default(),
            available: 0,
            consumed: 0,
            cfg,
            scaler,
            kernel,
            h1,
            tables,
        })
    }

    pub fn beta(&self) -> &GaussianBelief {
        &self.beta
    }

    pub fn tables(&self) -> &ProxyTables {
        &self.tables
    }

    pub fn joint_posterior(&self) -> Result<GaussianBelief> {
        self.joint.posterior()
    }
}

impl Learner for ProposedLearner {
    fn decide(&mut self, ctx: &DecisionContext, rng: &mut dyn RngCore) -> Result<SelectionOutcome> {
        select_action(ctx, &self.beta, &self.tables, &self.scaler, &self.cfg, rng)
    }

    fn nightly(&mut self, history: &[HistoryRecord]) -> Result<()> {
        let dosage = self.scaler.range(DOSAGE)?;
        for (offset, rec) in history[self.consumed..].iter().enumerate() {
            if !rec.reward.is_finite() {
                return Err(Error::NonFiniteReward {
                    index: self.consumed + offset,
                });
            }
            let std = StandardizedContext::new(&rec.context.raw, &self.scaler)?;
            let pair = std.with_dosage(dosage.standardize(rec.context.dosage));
            if rec.context.available {
                self.joint
                    .observe(&joint_feature(&pair, rec.pi, rec.action), rec.reward)?;
                self.available += 1;
            } else {
                self.unavail.observe(&pair.g, rec.reward)?;
            }
            self.contexts.push(&std);
        }
        self.consumed = history.len();

        let joint = self.joint.posterior()?;
        self.beta = extract_beta(&joint, self.f_dim)?;

        if self.cfg.w == 0.0 || self.contexts.count() == 0 {
            // H = H1 regardless of H*.
            return Ok(());
        }
        let coef = RewardCoefficients {
            alpha: joint.mean.rows(0, self.g_dim).into_owned(),
            beta: self.beta.mean.clone(),
            alpha_unavail: self.unavail.posterior()?.mean,
        };
        let rewards = marginal_rewards_from_mean(
            &self.contexts.mean()?,
            &coef,
            self.kernel.grid(),
            &self.scaler,
        )?;
        let p_avail = self.available as f64 / self.contexts.count() as f64;
        // Previous night's (or H1's) value table warm-starts the solve.
        let h_star = FutureValue::solve(
            &rewards,
            &self.kernel,
            p_avail,
            self.cfg.gamma,
            Some(&self.tables.v),
        )?;
        self.tables = blend_and_eta(&h_star, &self.h1, self.cfg.w, self.cfg.gamma)?;
        Ok(())
    }
}

/// Thompson-sampling bandit on `g^T α + a f^T β`.
pub struct BanditLearner {
    cfg: AlgoConfig,
    scaler: Scaler,
    reg: ConjugateRegression,
    belief: GaussianBelief,
    consumed: usize,
}

impl BanditLearner {
    pub fn new(cfg: AlgoConfig, scaler: Scaler, prior: &JointPrior) -> Result<Self> {
        cfg.validate()?;
        let belief = bandit_prior(prior);
        Ok(Self {
            reg: ConjugateRegression::new(belief.clone(), cfg.sigma2)?,
            belief,
            consumed: 0,
            cfg,
            scaler,
        })
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }
}

impl Learner for BanditLearner {
    fn decide(&mut self, ctx: &DecisionContext, rng: &mut dyn RngCore) -> Result<SelectionOutcome> {
        if !ctx.available {
            return Err(Error::Unavailable);
        }
        let pair = build_features(&ctx.raw, ctx.dosage, &self.scaler)?;
        let pre_clip = bandit_prob(&pair, &self.belief)?;
        let pi = clip_probability(pre_clip, self.cfg.epsilon0, self.cfg.epsilon1)?;
        let p = pair.f.len();
        let effect: DVector<f64> = self.belief.mean.rows(self.belief.dim() - p, p).into_owned();
        Ok(SelectionOutcome {
            pi,
            action: bernoulli(pi, rng),
            pre_clip,
            eta_used: 0.0,
            effect_mean: pair.f.dot(&effect),
        })
    }

    fn nightly(&mut self, history: &[HistoryRecord]) -> Result<()> {
        for (offset, rec) in history[self.consumed..].iter().enumerate() {
            if !rec.context.available {
                continue;
            }
            if !rec.reward.is_finite() {
                return Err(Error::NonFiniteReward {
                    index: self.consumed + offset,
                });
            }
            let pair = build_features(&rec.context.raw, rec.context.dosage, &self.scaler)?;
            self.reg.observe(&bandit_feature(&pair, rec.action), rec.reward)?;
        }
        self.consumed = history.len();
        self.belief = self.reg.posterior()?;
        Ok(())
    }
}
