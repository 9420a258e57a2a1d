//! Gaussian beliefs and conjugate Bayesian linear regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JITTER: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-10;

/// Mean and covariance of a multivariate normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BeliefSnapshot", try_from = "BeliefSnapshot")]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Plain JSON form of a belief.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl From<GaussianBelief> for BeliefSnapshot {
    fn from(b: GaussianBelief) -> Self {
        let cov = b
            .cov
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        Self {
            mean: b.mean.iter().copied().collect(),
            cov,
        }
    }
}

impl TryFrom<BeliefSnapshot> for GaussianBelief {
    type Error = Error;

    fn try_from(s: BeliefSnapshot) -> Result<Self> {
        let n = s.mean.len();
        if s.cov.len() != n || s.cov.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: s.cov.len(),
            });
        }
        let cov = DMatrix::from_fn(n, n, |i, j| s.cov[i][j]);
        GaussianBelief::new(DVector::from_vec(s.mean), cov)
    }
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::Config(format!("covariance asymmetric by {asym:e}")));
        }
        Ok(Self { mean, cov })
    }

    /// Independent coordinates with the given means and standard deviations.
    pub fn diagonal(mean: &[f64], sd: &[f64]) -> Result<Self> {
        if mean.len() != sd.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: sd.len(),
            });
        }
        let var: Vec<f64> = sd.iter().map(|s| s * s).collect();
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_vec(var)),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal over the contiguous coordinates `start..start + len`.
    pub fn marginal(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.dim() {
            return Err(Error::Dimension {
                expected: start + len,
                got: self.dim(),
            });
        }
        Ok(Self {
            mean: self.mean.rows(start, len).into_owned(),
            cov: self.cov.view((start, start), (len, len)).into_owned(),
        })
    }

    /// Mean and variance of the linear functional `x^T θ`.
    pub fn project(&self, x: &DVector<f64>) -> Result<(f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok((x.dot(&self.mean), (&self.cov * x).dot(x)))
    }
}

/// Inverse of a symmetric positive-definite matrix.
///
/// Falls back to one retry with `1e-9·I` added when the Cholesky factorization
/// fails.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().or_else(|| {
        let n = m.nrows();
        (m + DMatrix::identity(n, n) * JITTER).cholesky()
    });
    let inv = chol
        .ok_or(Error::NotPositiveDefinite("cholesky failed after jitter"))?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Conjugate linear-Gaussian regression `y = x^T θ + N(0, σ²)` in natural
/// parameters. Observations accumulate as `Σ x x^T` and `Σ x y`, so the
/// posterior after any sequence of rank-one updates equals the batch formula.
#[derive(Debug, Clone)]
pub struct ConjugateRegression {
    prior: GaussianBelief,
    prior_precision: DMatrix<f64>,
    prior_shift: DVector<f64>,
    xx: DMatrix<f64>,
    xy: DVector<f64>,
    sigma2: f64,
    count: usize,
}

impl ConjugateRegression {
    pub fn new(prior: GaussianBelief, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 {sigma2} must be positive")));
        }
        let prior_precision = prior
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("singular prior covariance"))?
            .inverse();
        let prior_shift = &prior_precision * &prior.mean;
        let n = prior.dim();
        Ok(Self {
            prior,
            prior_precision,
            prior_shift,
            xx: DMatrix::zeros(n, n),
            xy: DVector::zeros(n),
            sigma2,
            count: 0,
        })
    }

    pub fn prior(&self) -> &GaussianBelief {
        &self.prior
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn observe(&mut self, x: &DVector<f64>, y: f64) -> Result<()> {
        if x.len() != self.prior.dim() {
            return Err(Error::Dimension {
                expected: self.prior.dim(),
                got: x.len(),
            });
        }
        if !y.is_finite() {
            return Err(Error::NonFiniteReward { index: self.count });
        }
        self.xx.ger(1.0, x, x, 1.0);
        self.xy.axpy(y, x, 1.0);
        self.count += 1;
        Ok(())
    }

    /// `Σ' = (XᵀX/σ² + Σ⁻¹)⁻¹`, `μ' = Σ'(Xᵀy/σ² + Σ⁻¹μ)`.
    pub fn posterior(&self) -> Result<GaussianBelief> {
        if self.count == 0 {
            return Ok(self.prior.clone());
        }
        let precision = &self.prior_precision + &self.xx / self.sigma2;
        let cov = spd_inverse(&precision)?;
        let mean = &cov * (&self.prior_shift + &self.xy / self.sigma2);
        Ok(GaussianBelief { mean, cov })
    }
}

/// Batch conjugate update over `(x, y)` rows.
pub fn conjugate_update<I>(prior: &GaussianBelief, sigma2: f64, rows: I) -> Result<GaussianBelief>
where
    I: IntoIterator<Item = (DVector<f64>, f64)>,
{
    let mut reg = ConjugateRegression::new(prior.clone(), sigma2)?;
    for (index, (x, y)) in rows.into_iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::NonFiniteReward { index });
        }
        reg.observe(&x, y)?;
    }
    reg.posterior()
}
