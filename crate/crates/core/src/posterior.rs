//! Action-centered working model: joint features, nightly posterior and the
//! treatment-effect marginal.
//!
//! The working model at available times is
//! `R = g^T α0 + π f^T α1 + (A − π) f^T β + noise`, with independent priors
//! `α0 ~ N(μ_α0, Σ_α0)` and `α1, β ~ N(μ_β, Σ_β)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::belief::{conjugate_update, ConjugateRegression, GaussianBelief};
use crate::error::{Error, Result};
use crate::features::{FeaturePair, HistoryRecord, Scaler, StandardizedContext};

/// Block prior `N((μ_α0, μ_β, μ_β), diag(Σ_α0, Σ_β, Σ_β))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPrior {
    pub baseline: GaussianBelief,
    pub effect: GaussianBelief,
}

impl JointPrior {
    pub fn new(baseline: GaussianBelief, effect: GaussianBelief) -> Self {
        Self { baseline, effect }
    }

    pub fn g_dim(&self) -> usize {
        self.baseline.dim()
    }

    pub fn f_dim(&self) -> usize {
        self.effect.dim()
    }

    pub fn dim(&self) -> usize {
        self.g_dim() + 2 * self.f_dim()
    }

    pub fn to_belief(&self) -> GaussianBelief {
        let (q, p) = (self.g_dim(), self.f_dim());
        let n = q + 2 * p;
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        mean.rows_mut(0, q).copy_from(&self.baseline.mean);
        cov.view_mut((0, 0), (q, q)).copy_from(&self.baseline.cov);
        for start in [q, q + p] {
            mean.rows_mut(start, p).copy_from(&self.effect.mean);
            cov.view_mut((start, start), (p, p)).copy_from(&self.effect.cov);
        }
        GaussianBelief { mean, cov }
    }
}

/// `(g, π f, (a − π) f)`.
pub fn joint_feature(pair: &FeaturePair, pi: f64, action: bool) -> DVector<f64> {
    let (q, p) = (pair.g.len(), pair.f.len());
    let centered = f64::from(u8::from(action)) - pi;
    let mut phi = DVector::zeros(q + 2 * p);
    phi.rows_mut(0, q).copy_from(&pair.g);
    phi.rows_mut(q, p).copy_from(&(&pair.f * pi));
    phi.rows_mut(q + p, p).copy_from(&(&pair.f * centered));
    phi
}

fn record_features(rec: &HistoryRecord, scaler: &Scaler) -> Result<FeaturePair> {
    let ctx = StandardizedContext::new(&rec.context.raw, scaler)?;
    Ok(ctx.with_dosage(scaler.standardize(crate::features::DOSAGE, rec.context.dosage)?))
}

/// Posterior of `(α0, α1, β)` given the available records of `history`.
pub fn posterior_joint(
    history: &[HistoryRecord],
    scaler: &Scaler,
    prior: &JointPrior,
    sigma2: f64,
) -> Result<GaussianBelief> {
    let mut reg = ConjugateRegression::new(prior.to_belief(), sigma2)?;
    for (index, rec) in history.iter().enumerate() {
        if !rec.context.available {
            continue;
        }
        if !rec.reward.is_finite() {
            return Err(Error::NonFiniteReward { index });
        }
        let pair = record_features(rec, scaler)?;
        reg.observe(&joint_feature(&pair, rec.pi, rec.action), rec.reward)?;
    }
    reg.posterior()
}

/// Marginal of the last `p` coordinates.
pub fn extract_beta(joint: &GaussianBelief, p: usize) -> Result<GaussianBelief> {
    if p > joint.dim() {
        return Err(Error::Dimension {
            expected: p,
            got: joint.dim(),
        });
    }
    joint.marginal(joint.dim() - p, p)
}

/// Baseline-only posterior from the unavailable records of `history`.
pub fn fit_unavailable(
    history: &[HistoryRecord],
    scaler: &Scaler,
    prior_g: &GaussianBelief,
    sigma2: f64,
) -> Result<GaussianBelief> {
    let mut rows = Vec::new();
    for (index, rec) in history.iter().enumerate() {
        if rec.context.available {
            continue;
        }
        if !rec.reward.is_finite() {
            return Err(Error::NonFiniteReward { index });
        }
        rows.push((record_features(rec, scaler)?.g, rec.reward));
    }
    conjugate_update(prior_g, sigma2, rows)
}
