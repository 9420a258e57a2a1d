//! Real-time action selection.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::belief::GaussianBelief;
use crate::config::AlgoConfig;
use crate::error::{Error, Result};
use crate::features::{build_features, clip_probability, DecisionContext, Scaler};
use crate::proxy::ProxyTables;

/// Result of one available decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub pi: f64,
    pub action: bool,
    pub pre_clip: f64,
    pub eta_used: f64,
    /// Posterior mean treatment effect `f^T μ`.
    pub effect_mean: f64,
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `Pr(f^T β > η)` for `β ~ N(μ, Σ)`.
///
/// A degenerate belief (`f^T Σ f = 0`) gives 1 above η, 0 below and 0.5 on a tie.
pub fn treatment_prob(f: &DVector<f64>, belief: &GaussianBelief, eta: f64) -> Result<f64> {
    let (mean, var) = belief.project(f)?;
    Ok(gaussian_exceedance(mean, var, eta))
}

pub(crate) fn gaussian_exceedance(mean: f64, var: f64, threshold: f64) -> f64 {
    if var <= 0.0 {
        return match mean.partial_cmp(&threshold) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        };
    }
    normal_cdf((mean - threshold) / var.sqrt())
}

/// Draw a Bernoulli(`pi`) action with a single uniform.
pub fn bernoulli<R: Rng + ?Sized>(pi: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < pi
}

/// Clipped Thompson-sampling probability against the delayed-effect proxy,
/// then a Bernoulli draw.
pub fn select_action<R: Rng + ?Sized>(
    ctx: &DecisionContext,
    beta: &GaussianBelief,
    proxy: &ProxyTables,
    scaler: &Scaler,
    cfg: &AlgoConfig,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    if !ctx.available {
        return Err(Error::Unavailable);
    }
    let eta = proxy.eta_lookup(ctx.dosage)?;
    let fp = build_features(&ctx.raw, ctx.dosage, scaler)?;
    let (effect_mean, var) = beta.project(&fp.f)?;
    let pre_clip = gaussian_exceedance(effect_mean, var, eta);
    let pi = clip_probability(pre_clip, cfg.epsilon0, cfg.epsilon1)?;
    let action = bernoulli(pi, rng);
    Ok(SelectionOutcome {
        pi,
        action,
        pre_clip,
        eta_used: eta,
        effect_mean,
    })
}
