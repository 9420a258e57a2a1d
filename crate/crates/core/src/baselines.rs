//! Thompson-sampling bandit comparator with a non-centered reward model
//! `r(s, a) = g^T α + a f^T β`.

use nalgebra::DVector;

use crate::belief::{conjugate_update, GaussianBelief};
use crate::error::{Error, Result};
use crate::features::{FeaturePair, HistoryRecord, Scaler};
use crate::posterior::JointPrior;
use crate::selector::gaussian_exceedance;

/// Joint Gaussian over `(α, β)`.
pub type BanditBelief = GaussianBelief;

/// Prior `N((μ_α, μ_β), diag(Σ_α, Σ_β))`.
pub fn bandit_prior(prior: &JointPrior) -> BanditBelief {
    let (q, p) = (prior.g_dim(), prior.f_dim());
    let mut mean = DVector::zeros(q + p);
    let mut cov = nalgebra::DMatrix::zeros(q + p, q + p);
    mean.rows_mut(0, q).copy_from(&prior.baseline.mean);
    mean.rows_mut(q, p).copy_from(&prior.effect.mean);
    cov.view_mut((0, 0), (q, q)).copy_from(&prior.baseline.cov);
    cov.view_mut((q, q), (p, p)).copy_from(&prior.effect.cov);
    GaussianBelief { mean, cov }
}

/// `(g, a·f)`.
pub fn bandit_feature(pair: &FeaturePair, action: bool) -> DVector<f64> {
    let (q, p) = (pair.g.len(), pair.f.len());
    let mut x = DVector::zeros(q + p);
    x.rows_mut(0, q).copy_from(&pair.g);
    if action {
        x.rows_mut(q, p).copy_from(&pair.f);
    }
    x
}

/// Probability that arm 1 has the larger sampled reward, `Pr(f^T β > 0)`.
pub fn bandit_prob(pair: &FeaturePair, belief: &BanditBelief) -> Result<f64> {
    let p = pair.f.len();
    if belief.dim() != pair.g.len() + p {
        return Err(Error::Dimension {
            expected: pair.g.len() + p,
            got: belief.dim(),
        });
    }
    let beta = belief.marginal(belief.dim() - p, p)?;
    let (mean, var) = beta.project(&pair.f)?;
    Ok(gaussian_exceedance(mean, var, 0.0))
}

/// Posterior over `(α, β)` from the available records.
pub fn bandit_update(
    history: &[HistoryRecord],
    scaler: &Scaler,
    prior: &BanditBelief,
    sigma2: f64,
) -> Result<BanditBelief> {
    let mut rows = Vec::with_capacity(history.len());
    for rec in history.iter().filter(|r| r.context.available) {
        let pair = crate::features::build_features(&rec.context.raw, rec.context.dosage, scaler)?;
        rows.push((bandit_feature(&pair, rec.action), rec.reward));
    }
    conjugate_update(prior, sigma2, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::treatment_prob;

    fn pair() -> FeaturePair {
        FeaturePair {
            f: DVector::from_column_slice(&[1.0, 0.5]),
            g: DVector::from_column_slice(&[1.0, 0.5, 0.2]),
        }
    }

    #[test]
    fn symmetric_belief_is_half() {
        let b = GaussianBelief::diagonal(&[3.0, 1.0, 2.0, 0.0, 0.0], &[1.0; 5]).unwrap();
        assert!((bandit_prob(&pair(), &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_treatment_prob_at_zero_threshold() {
        let b = GaussianBelief::diagonal(&[3.0, 1.0, 2.0, 0.4, -0.3], &[1.0, 2.0, 0.5, 0.7, 0.2]).unwrap();
        let beta = b.marginal(3, 2).unwrap();
        let lhs = bandit_prob(&pair(), &b).unwrap();
        let rhs = treatment_prob(&pair().f, &beta, 0.0).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn feature_layout() {
        let x = bandit_feature(&pair(), false);
        assert_eq!(x.as_slice(), &[1.0, 0.5, 0.2, 0.0, 0.0]);
        let x = bandit_feature(&pair(), true);
        assert_eq!(x.as_slice(), &[1.0, 0.5, 0.2, 1.0, 0.5]);
        let bad = GaussianBelief::diagonal(&[0.0; 4], &[1.0; 4]).unwrap();
        assert!(bandit_prob(&pair(), &bad).is_err());
    }
}
