//! Least squares with participant-clustered sandwich variance.
//!
//! With an independence working correlation, GEE for a linear mean model is
//! pooled least squares; its robust variance is the cluster sandwich
//! `B M B` with `B = (XᵀX)⁻¹` and `M = Σ_c (X_cᵀ e_c)(X_cᵀ e_c)ᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub robust_se: Vec<f64>,
    /// Two-sided, normal approximation.
    pub p_values: Vec<f64>,
    pub residual_variance: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

/// Columns that are (numerically) linear combinations of earlier columns.
pub fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let scale = col.norm().max(1.0);
        let mut v = col;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= RANK_TOL * scale {
            dependent.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    dependent
}

/// Fit `y = X b + e` and the cluster-robust covariance of `b`.
pub fn fit_clustered(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    clusters: &[u32],
    names: &[String],
) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n || clusters.len() != n || names.len() != p {
        return Err(Error::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    if n <= p {
        return Err(Error::InsufficientData(format!("{n} rows for {p} columns")));
    }
    let dependent = collinear_columns(x);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(
            dependent.into_iter().map(|j| names[j].clone()).collect(),
        ));
    }
    let xtx = x.transpose() * x;
    let chol = xtx
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("XᵀX"))?;
    let coef = chol.solve(&(x.transpose() * y));
    let bread = chol.inverse();
    let resid = y - x * &coef;

    // Rows are grouped by cluster id in first-seen order.
    let mut order: Vec<u32> = Vec::new();
    let mut scores: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        let k = match order.iter().position(|&c| c == clusters[i]) {
            Some(k) => k,
            None => {
                order.push(clusters[i]);
                scores.push(DVector::zeros(p));
                order.len() - 1
            }
        };
        scores[k].axpy(resid[i], &x.row(i).transpose(), 1.0);
    }
    let mut meat = DMatrix::zeros(p, p);
    for s in &scores {
        meat.ger(1.0, s, s, 1.0);
    }
    let cov = &bread * meat * &bread;
    let robust_se: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let p_values = coef
        .iter()
        .zip(&robust_se)
        .map(|(&b, &se)| two_sided_p(b, se))
        .collect();
    let residual_variance = resid.norm_squared() / (n - p) as f64;
    Ok(OlsFit {
        names: names.to_vec(),
        coef: coef.iter().copied().collect(),
        robust_se,
        p_values,
        residual_variance,
        n_obs: n,
        n_clusters: order.len(),
        residuals: resid.iter().copied().collect(),
    })
}

fn two_sided_p(b: f64, se: f64) -> f64 {
    if se > 0.0 {
        erfc((b / se).abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    } else if b != 0.0 {
        0.0
    } else {
        1.0
    }
}
