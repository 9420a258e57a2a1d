//! Dosage-only MDP used to proxy the delayed effect of treatment.
//!
//! States are `(x, i)`: dosage on a uniform grid over `[0, 1/(1−λ)]` and
//! availability. Context is marginalized out, availability is i.i.d.
//! Bernoulli(`p_avail`), and dosage moves to `λx + 1` after a suggestion
//! (or an anti-sedentary message, probability `p_sed`) and to `λx`
//! otherwise. Off-grid targets are split between the two bracketing grid
//! points by linear-interpolation weights.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::AlgoConfig;
use crate::error::{Error, Result};
use crate::features::{RawContext, Scaler, StandardizedContext, DOSAGE, DOSAGE_INDEX};

pub const VALUE_TOL: f64 = 1e-8;
pub const VALUE_MAX_ITER: usize = 100_000;

const GRID_TOL: f64 = 1e-9;

/// Uniform grid on `[0, bound]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosageGrid {
    points: Vec<f64>,
}

impl DosageGrid {
    pub fn uniform(size: usize, bound: f64) -> Result<Self> {
        if size < 2 || !(bound > 0.0) {
            return Err(Error::Config(format!(
                "dosage grid needs size >= 2 and positive bound (got {size}, {bound})"
            )));
        }
        let step = bound / (size - 1) as f64;
        let mut points: Vec<f64> = (0..size).map(|k| k as f64 * step).collect();
        points[size - 1] = bound;
        Ok(Self { points })
    }

    pub fn for_config(cfg: &AlgoConfig) -> Result<Self> {
        Self::uniform(cfg.dosage_grid_size, cfg.dosage_bound())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bound(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Bracketing index `k` and weight `t` with `x = (1−t)·p[k] + t·p[k+1]`.
    pub fn bracket(&self, x: f64) -> Result<(usize, f64)> {
        let bound = self.bound();
        if !(x >= -GRID_TOL && x <= bound + GRID_TOL) {
            return Err(Error::DosageOutOfRange { value: x, bound });
        }
        let x = x.clamp(0.0, bound);
        let n = self.points.len();
        let step = bound / (n - 1) as f64;
        let k = ((x / step).floor() as usize).min(n - 2);
        let t = ((x - self.points[k]) / (self.points[k + 1] - self.points[k])).clamp(0.0, 1.0);
        Ok((k, t))
    }

    /// Linear interpolation of `values` (one per grid point) at `x`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: values.len(),
            });
        }
        let (k, t) = self.bracket(x)?;
        if t == 0.0 {
            return Ok(values[k]);
        }
        if t == 1.0 {
            return Ok(values[k + 1]);
        }
        Ok((1.0 - t) * values[k] + t * values[k + 1])
    }

    fn spread(&self, x: f64, mass: f64, out: &mut Vec<(usize, f64)>) -> Result<()> {
        let (k, t) = self.bracket(x)?;
        for (idx, m) in [(k, mass * (1.0 - t)), (k + 1, mass * t)] {
            if m == 0.0 {
                continue;
            }
            match out.iter_mut().find(|(j, _)| *j == idx) {
                Some(e) => e.1 += m,
                None => out.push((idx, m)),
            }
        }
        Ok(())
    }
}

/// Sparse next-dosage distribution from grid point `x_index` under action `a`.
pub fn dosage_transition(
    x_index: usize,
    action: bool,
    lambda: f64,
    p_sed: f64,
    grid: &DosageGrid,
) -> Result<Vec<(usize, f64)>> {
    let x = *grid.points.get(x_index).ok_or(Error::IndexOutOfRange {
        index: x_index,
        len: grid.len(),
    })?;
    let mut out = Vec::with_capacity(4);
    if action {
        grid.spread(lambda * x + 1.0, 1.0, &mut out)?;
    } else {
        grid.spread(lambda * x + 1.0, p_sed, &mut out)?;
        grid.spread(lambda * x, 1.0 - p_sed, &mut out)?;
    }
    Ok(out)
}

/// Transition kernel `τ(·|x, a)` tabulated on a grid.
#[derive(Debug, Clone)]
pub struct DosageKernel {
    grid: DosageGrid,
    next: Vec<[Vec<(usize, f64)>; 2]>,
    /// Widest reach below and above the source point over both actions.
    band: (usize, usize),
}

impl DosageKernel {
    pub fn new(grid: DosageGrid, lambda: f64, p_sed: f64) -> Result<Self> {
        let next = (0..grid.len())
            .map(|k| {
                Ok([
                    dosage_transition(k, false, lambda, p_sed, &grid)?,
                    dosage_transition(k, true, lambda, p_sed, &grid)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        let mut band = (0, 0);
        for (k, rows) in next.iter().enumerate() {
            for &(j, _) in rows.iter().flatten() {
                band.0 = band.0.max(k.saturating_sub(j));
                band.1 = band.1.max(j.saturating_sub(k));
            }
        }
        Ok(Self { grid, next, band })
    }

    pub fn for_config(cfg: &AlgoConfig) -> Result<Self> {
        Self::new(DosageGrid::for_config(cfg)?, cfg.lambda, cfg.p_sed)
    }

    pub fn grid(&self) -> &DosageGrid {
        &self.grid
    }

    pub fn row(&self, x_index: usize, action: bool) -> &[(usize, f64)] {
        &self.next[x_index][usize::from(action)]
    }

    fn expect(&self, x_index: usize, action: bool, w: &[f64]) -> f64 {
        self.row(x_index, action).iter().map(|&(j, p)| p * w[j]).sum()
    }
}

/// Dosage-marginal rewards: `r1[x][a]` at available times, `r0[x]` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRewards {
    pub r1: Vec<[f64; 2]>,
    pub r0: Vec<f64>,
}

/// Running mean of standardized contexts, the empirical context distribution
/// collapsed to what linear rewards need.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextMean {
    sum: [f64; 6],
    count: usize,
}

impl ContextMean {
    pub fn push(&mut self, ctx: &StandardizedContext) {
        for (s, v) in self.sum.iter_mut().zip(ctx.0) {
            *s += v;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Result<StandardizedContext> {
        if self.count == 0 {
            return Err(Error::InsufficientData("empty context sample".into()));
        }
        let n = self.count as f64;
        Ok(StandardizedContext(self.sum.map(|s| s / n)))
    }
}

/// Reward coefficients used to marginalize: `α0` and `β` at available times,
/// `α0ᵘ` at unavailable times.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardCoefficients {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub alpha_unavail: DVector<f64>,
}

/// Average the linear reward over the context sample with dosage set to each
/// grid point.
pub fn marginal_rewards(
    contexts: &[RawContext],
    coef: &RewardCoefficients,
    grid: &DosageGrid,
    scaler: &Scaler,
) -> Result<MarginalRewards> {
    let mut acc = ContextMean::default();
    for raw in contexts {
        acc.push(&StandardizedContext::new(raw, scaler)?);
    }
    marginal_rewards_from_mean(&acc.mean()?, coef, grid, scaler)
}

/// Same as [`marginal_rewards`], given the mean standardized context. Exact
/// because the reward is linear in the features and only the dosage entry
/// depends on `x`.
pub fn marginal_rewards_from_mean(
    mean: &StandardizedContext,
    coef: &RewardCoefficients,
    grid: &DosageGrid,
    scaler: &Scaler,
) -> Result<MarginalRewards> {
    let dosage = scaler.range(DOSAGE)?;
    let fp = mean.with_dosage(0.0);
    if fp.g.len() != coef.alpha.len()
        || fp.f.len() != coef.beta.len()
        || fp.g.len() != coef.alpha_unavail.len()
    {
        return Err(Error::Dimension {
            expected: fp.g.len(),
            got: coef.alpha.len(),
        });
    }
    // Only the dosage entry of g and f depends on x.
    let at_zero = [
        fp.g.dot(&coef.alpha),
        fp.f.dot(&coef.beta),
        fp.g.dot(&coef.alpha_unavail),
    ];
    let slope = [
        coef.alpha[DOSAGE_INDEX],
        coef.beta[DOSAGE_INDEX],
        coef.alpha_unavail[DOSAGE_INDEX],
    ];
    let mut r1 = Vec::with_capacity(grid.len());
    let mut r0 = Vec::with_capacity(grid.len());
    for &x in grid.points() {
        let d = dosage.standardize(x);
        let base = at_zero[0] + slope[0] * d;
        r1.push([base, base + at_zero[1] + slope[1] * d]);
        r0.push(at_zero[2] + slope[2] * d);
    }
    Ok(MarginalRewards { r1, r0 })
}

/// Optimal value `V(x, i)` of the dosage MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    /// Indexed `[x][i]`.
    pub v: Vec<[f64; 2]>,
    /// Sup-norm Bellman residual of `v`.
    pub residual: f64,
    pub iterations: usize,
}

fn availability_mix(v: &[[f64; 2]], p_avail: f64) -> Vec<f64> {
    v.iter()
        .map(|vi| p_avail * vi[1] + (1.0 - p_avail) * vi[0])
        .collect()
}

/// One application of the availability-constrained Bellman optimality operator.
pub fn bellman_operator(
    rewards: &MarginalRewards,
    kernel: &DosageKernel,
    p_avail: f64,
    gamma: f64,
    v: &[[f64; 2]],
) -> Vec<[f64; 2]> {
    let w = availability_mix(v, p_avail);
    (0..kernel.grid.len())
        .map(|k| {
            let cont0 = gamma * kernel.expect(k, false, &w);
            let cont1 = gamma * kernel.expect(k, true, &w);
            let unavailable = rewards.r0[k] + cont0;
            let available = (rewards.r1[k][0] + cont0).max(rewards.r1[k][1] + cont1);
            [unavailable, available]
        })
        .collect()
}

fn sup_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x[0] - y[0]).abs().max((x[1] - y[1]).abs()))
        .fold(0.0, f64::max)
}

fn check_problem(
    rewards: &MarginalRewards,
    kernel: &DosageKernel,
    p_avail: f64,
    gamma: f64,
    tol: f64,
) -> Result<usize> {
    let n = kernel.grid.len();
    if rewards.r1.len() != n || rewards.r0.len() != n {
        return Err(Error::GridMismatch(format!(
            "rewards have {} points, kernel has {n}",
            rewards.r1.len()
        )));
    }
    if !(0.0..1.0).contains(&gamma) || !(0.0..=1.0).contains(&p_avail) || !(tol > 0.0) {
        return Err(Error::Config(format!(
            "value iteration needs gamma in [0,1), p_avail in [0,1], tol > 0 (got {gamma}, {p_avail}, {tol})"
        )));
    }
    Ok(n)
}

/// Value iteration until successive iterates differ by less than `tol` in
/// sup norm. `init` warm-starts the iteration.
pub fn value_iteration(
    rewards: &MarginalRewards,
    kernel: &DosageKernel,
    p_avail: f64,
    gamma: f64,
    tol: f64,
    max_iter: usize,
    init: Option<&[[f64; 2]]>,
) -> Result<ValueTable> {
    let n = check_problem(rewards, kernel, p_avail, gamma, tol)?;
    let mut v = match init {
        Some(v0) if v0.len() == n => v0.to_vec(),
        _ => vec![[0.0; 2]; n],
    };
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let next = bellman_operator(rewards, kernel, p_avail, gamma, &v);
        let step = sup_distance(&next, &v);
        v = next;
        if step < tol {
            // ‖T v − v‖ ≤ γ·step for the returned iterate; record it exactly.
            residual = sup_distance(&bellman_operator(rewards, kernel, p_avail, gamma, &v), &v);
            if residual < tol {
                return Ok(ValueTable {
                    v,
                    residual,
                    iterations: iteration,
                });
            }
        }
        residual = step;
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Optimal value table with Bellman residual below `tol`.
///
/// Runs policy iteration on `W = p V(·,1) + (1−p) V(·,0)`: each policy is
/// evaluated exactly by a banded solve of `(I − γ P_π) W = c_π`, which needs
/// no pivoting because the matrix is strictly diagonally dominant. The greedy
/// policy of `init` seeds the first evaluation. If round-off leaves the
/// residual above `tol`, plain value iteration finishes from there.
/// `iterations` counts policy evaluations (plus any value-iteration sweeps).
pub fn solve_value(
    rewards: &MarginalRewards,
    kernel: &DosageKernel,
    p_avail: f64,
    gamma: f64,
    tol: f64,
    max_iter: usize,
    init: Option<&[[f64; 2]]>,
) -> Result<ValueTable> {
    let n = check_problem(rewards, kernel, p_avail, gamma, tol)?;
    let mut w = match init {
        Some(v0) if v0.len() == n => availability_mix(v0, p_avail),
        _ => vec![0.0; n],
    };
    let mut policy = vec![false; n];
    greedy_policy(rewards, kernel, gamma, &w, &mut policy);
    let mut evaluations = 0;
    while evaluations < max_iter.min(n + 1) {
        w = evaluate_policy(rewards, kernel, p_avail, gamma, &policy);
        evaluations += 1;
        if !greedy_policy(rewards, kernel, gamma, &w, &mut policy) {
            break;
        }
    }
    let v: Vec<[f64; 2]> = (0..n)
        .map(|k| {
            let cont0 = gamma * kernel.expect(k, false, &w);
            let cont1 = gamma * kernel.expect(k, true, &w);
            [
                rewards.r0[k] + cont0,
                (rewards.r1[k][0] + cont0).max(rewards.r1[k][1] + cont1),
            ]
        })
        .collect();
    let residual = sup_distance(&bellman_operator(rewards, kernel, p_avail, gamma, &v), &v);
    if residual < tol {
        return Ok(ValueTable {
            v,
            residual,
            iterations: evaluations,
        });
    }
    let mut table = value_iteration(rewards, kernel, p_avail, gamma, tol, max_iter, Some(&v))?;
    table.iterations += evaluations;
    Ok(table)
}

/// Greedy improvement of `policy` against `w`; keeps the current action on
/// (near-)ties so round-off cannot cycle. Returns whether anything changed.
fn greedy_policy(
    rewards: &MarginalRewards,
    kernel: &DosageKernel,
    gamma: f64,
    w: &[f64],
    policy: &mut [bool],
) -> bool {
    let mut changed = false;
    for (k, a) in policy.iter_mut().enumerate() {
        let q0 = rewards.r1[k][0] + gamma * kernel.expect(k, false, w);
        let q1 = rewards.r1[k][1] + gamma * kernel.expect(k, true, w);
        let margin = 1e-12 * (1.0 + q0.abs().max(q1.abs()));
        let best = if *a { q1 >= q0 - margin } else { q1 > q0 + margin };
        changed |= best != *a;
        *a = best;
    }
    changed
}

/// Solve `W = c_π + γ P_π W` for a fixed available-time policy.
fn evaluate_policy(
    rewards: &MarginalRewards,
    kernel: &DosageKernel,
    p_avail: f64,
    gamma: f64,
    policy: &[bool],
) -> Vec<f64> {
    let n = policy.len();
    let (lo, hi) = kernel.band;
    let width = lo + hi + 1;
    // band[i * width + (j + lo - i)] holds A[i][j]
    let mut band = vec![0.0; n * width];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let a = policy[i];
        rhs[i] = p_avail * rewards.r1[i][usize::from(a)] + (1.0 - p_avail) * rewards.r0[i];
        band[i * width + lo] = 1.0;
        for &(j, m) in kernel.row(i, a) {
            band[i * width + j + lo - i] -= gamma * p_avail * m;
        }
        for &(j, m) in kernel.row(i, false) {
            band[i * width + j + lo - i] -= gamma * (1.0 - p_avail) * m;
        }
    }
    for k in 0..n {
        let len = (hi + 1).min(n - k);
        let (head, tail) = band.split_at_mut((k + 1) * width);
        let pivot_row = &head[k * width + lo..k * width + lo + len];
        let pivot = pivot_row[0];
        for i in k + 1..n.min(k + lo + 1) {
            let start = (i - k - 1) * width + k + lo - i;
            let row = &mut tail[start..start + len];
            let factor = row[0] / pivot;
            if factor == 0.0 {
                continue;
            }
            for (a, b) in row.iter_mut().zip(pivot_row) {
                *a -= factor * b;
            }
            rhs[i] -= factor * rhs[k];
        }
    }
    let mut w = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = rhs[k];
        for j in k + 1..n.min(k + hi + 1) {
            s -= band[k * width + j + lo - k] * w[j];
        }
        w[k] = s / band[k * width + lo];
    }
    w
}

/// Expected next-state value `H(x, a) = Σ τ(x'|x,a) [p V(x',1) + (1−p) V(x',0)]`.
pub fn compute_h(v: &ValueTable, kernel: &DosageKernel, p_avail: f64) -> Result<FutureValue> {
    if v.v.len() != kernel.grid.len() {
        return Err(Error::GridMismatch(format!(
            "value table has {} points, kernel has {}",
            v.v.len(),
            kernel.grid.len()
        )));
    }
    let w = availability_mix(&v.v, p_avail);
    let h = (0..kernel.grid.len())
        .map(|k| [kernel.expect(k, false, &w), kernel.expect(k, true, &w)])
        .collect();
    Ok(FutureValue {
        grid: kernel.grid.clone(),
        v: v.v.clone(),
        h,
        p_avail,
    })
}

/// Future value `H(x, a)` together with the value table it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureValue {
    pub grid: DosageGrid,
    /// Indexed `[x][i]`.
    pub v: Vec<[f64; 2]>,
    /// Indexed `[x][a]`.
    pub h: Vec<[f64; 2]>,
    pub p_avail: f64,
}

impl FutureValue {
    /// Marginalize, solve and take expectations in one go.
    pub fn solve(
        rewards: &MarginalRewards,
        kernel: &DosageKernel,
        p_avail: f64,
        gamma: f64,
        init: Option<&[[f64; 2]]>,
    ) -> Result<Self> {
        let v = solve_value(rewards, kernel, p_avail, gamma, VALUE_TOL, VALUE_MAX_ITER, init)?;
        compute_h(&v, kernel, p_avail)
    }
}

/// Blended future value and the delayed-effect proxy `η(x) = γ(H(x,0) − H(x,1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyTables {
    pub grid: DosageGrid,
    /// Value table of the participant-specific solve, indexed `[x][i]`.
    pub v: Vec<[f64; 2]>,
    /// Blended `H`, indexed `[x][a]`.
    pub h: Vec<[f64; 2]>,
    pub eta: Vec<f64>,
    pub gamma: f64,
    pub w: f64,
    pub p_avail: f64,
}

/// `H = (1 − w)·H₁ + w·H*` and its η.
pub fn blend_and_eta(
    h_star: &FutureValue,
    h1: &FutureValue,
    w: f64,
    gamma: f64,
) -> Result<ProxyTables> {
    if h_star.grid != h1.grid {
        return Err(Error::GridMismatch("H* and H1 live on different grids".into()));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Config(format!("w {w} not in [0,1]")));
    }
    let h: Vec<[f64; 2]> = h1
        .h
        .iter()
        .zip(&h_star.h)
        .map(|(a, b)| [(1.0 - w) * a[0] + w * b[0], (1.0 - w) * a[1] + w * b[1]])
        .collect();
    let eta = h.iter().map(|hx| gamma * hx[0] - gamma * hx[1]).collect();
    Ok(ProxyTables {
        grid: h_star.grid.clone(),
        v: h_star.v.clone(),
        h,
        eta,
        gamma,
        w,
        p_avail: h_star.p_avail,
    })
}

impl ProxyTables {
    /// Day-one tables: `H = H₁`.
    pub fn initial(h1: &FutureValue, gamma: f64) -> Result<Self> {
        let mut t = blend_and_eta(h1, h1, 0.0, gamma)?;
        t.w = 0.0;
        Ok(t)
    }

    /// η ≡ 0, as in a myopic bandit.
    pub fn zero(grid: DosageGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            v: vec![[0.0; 2]; n],
            h: vec![[0.0; 2]; n],
            eta: vec![0.0; n],
            gamma: 0.0,
            w: 0.0,
            p_avail: 0.0,
        }
    }

    pub fn eta_lookup(&self, x: f64) -> Result<f64> {
        self.grid.interpolate(&self.eta, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(size: usize, p_sed: f64) -> DosageKernel {
        DosageKernel::new(DosageGrid::uniform(size, 20.0).unwrap(), 0.95, p_sed).unwrap()
    }

    fn constant_rewards(n: usize, c: f64) -> MarginalRewards {
        MarginalRewards {
            r1: vec![[c, c]; n],
            r0: vec![c; n],
        }
    }

    #[test]
    fn grid_shape() {
        let g = DosageGrid::uniform(201, 20.0).unwrap();
        assert_eq!(g.points()[0], 0.0);
        assert_eq!(g.bound(), 20.0);
        assert!(g.points().windows(2).all(|w| w[1] > w[0]));
        assert!((g.points()[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transition_examples() {
        let g = DosageGrid::uniform(201, 20.0).unwrap();
        let t = dosage_transition(0, true, 0.95, 0.2, &g).unwrap();
        let at_one: f64 = t
            .iter()
            .filter(|(j, _)| (g.points()[*j] - 1.0).abs() < 1e-9)
            .map(|(_, p)| p)
            .sum();
        assert!((at_one - 1.0).abs() < 1e-12);

        let t = dosage_transition(0, false, 0.95, 0.2, &g).unwrap();
        let mass = |x: f64| -> f64 {
            t.iter()
                .filter(|(j, _)| (g.points()[*j] - x).abs() < 1e-9)
                .map(|(_, p)| p)
                .sum()
        };
        assert!((mass(0.0) - 0.8).abs() < 1e-12);
        assert!((mass(1.0) - 0.2).abs() < 1e-12);

        for k in 0..g.len() {
            for a in [false, true] {
                let s: f64 = dosage_transition(k, a, 0.95, 0.2, &g)
                    .unwrap()
                    .iter()
                    .map(|(_, p)| p)
                    .sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transition_preserves_mean_dosage() {
        // linear splitting keeps E[x'] equal to the continuous target
        let g = DosageGrid::uniform(21, 20.0).unwrap();
        for k in 0..g.len() {
            let x = g.points()[k];
            let t = dosage_transition(k, false, 0.95, 0.3, &g).unwrap();
            let mean: f64 = t.iter().map(|&(j, p)| p * g.points()[j]).sum();
            assert!((mean - (0.95 * x + 0.3)).abs() < 1e-9);
        }
    }

    #[test]
    fn gamma_zero_is_one_step() {
        let k = kernel(11, 0.2);
        let r = MarginalRewards {
            r1: (0..11).map(|i| [i as f64, 5.0 - i as f64]).collect(),
            r0: (0..11).map(|i| -(i as f64)).collect(),
        };
        let v = solve_value(&r, &k, 0.7, 0.0, 1e-10, 100, None).unwrap();
        for i in 0..11 {
            assert_eq!(v.v[i][1], r.r1[i][0].max(r.r1[i][1]));
            assert_eq!(v.v[i][0], r.r0[i]);
        }
    }

    #[test]
    fn constant_rewards_geometric_series() {
        let k = kernel(21, 0.2);
        for gamma in [0.0, 0.5, 0.9, 0.95] {
            let v = solve_value(&constant_rewards(21, 3.0), &k, 0.8, gamma, 1e-10, 100_000, None)
                .unwrap();
            let expect = 3.0 / (1.0 - gamma);
            assert!(v.v.iter().all(|x| (x[0] - expect).abs() < 1e-8 && (x[1] - expect).abs() < 1e-8));
            let h = compute_h(&v, &k, 0.8).unwrap();
            assert!(h.h.iter().all(|x| (x[0] - expect).abs() < 1e-8 && (x[1] - expect).abs() < 1e-8));
        }
    }

    #[test]
    fn residual_is_below_tolerance() {
        let k = kernel(201, 0.2);
        let r = MarginalRewards {
            r1: (0..201).map(|i| [2.0 - 0.01 * i as f64, 2.3 - 0.012 * i as f64]).collect(),
            r0: (0..201).map(|i| 1.8 - 0.008 * i as f64).collect(),
        };
        let v = solve_value(&r, &k, 0.8, 0.95, VALUE_TOL, VALUE_MAX_ITER, None).unwrap();
        assert!(v.residual < VALUE_TOL);
        let again = bellman_operator(&r, &k, 0.8, 0.95, &v.v);
        assert!(sup_distance(&again, &v.v) < VALUE_TOL);

        // warm start from the solution converges immediately
        let warm = solve_value(&r, &k, 0.8, 0.95, VALUE_TOL, VALUE_MAX_ITER, Some(&v.v)).unwrap();
        assert!(warm.iterations <= 2);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let k = kernel(11, 0.2);
        match value_iteration(&constant_rewards(11, 1.0), &k, 0.5, 0.99, 1e-12, 5, None) {
            Err(Error::NotConverged { iterations, residual }) => {
                assert_eq!(iterations, 5);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn policy_iteration_agrees_with_value_iteration() {
        let k = kernel(201, 0.2);
        // treating pays at low dosage and costs at high dosage, so the
        // optimal policy switches along the grid
        let r = MarginalRewards {
            r1: (0..201)
                .map(|i| [1.0 - 0.01 * i as f64, 1.5 - 0.02 * i as f64 + 0.1 * (i as f64 / 7.0).sin()])
                .collect(),
            r0: (0..201).map(|i| 0.8 - 0.009 * i as f64).collect(),
        };
        for (gamma, p) in [(0.5, 0.8), (0.9, 0.3), (0.95, 1.0), (0.95, 0.0)] {
            let pi = solve_value(&r, &k, p, gamma, VALUE_TOL, VALUE_MAX_ITER, None).unwrap();
            let vi = value_iteration(&r, &k, p, gamma, 1e-11, VALUE_MAX_ITER, None).unwrap();
            assert!(pi.residual < VALUE_TOL);
            assert!(sup_distance(&pi.v, &vi.v) < 1e-9, "gamma {gamma} p {p}");
        }
    }

    #[test]
    fn successive_iterates_contract_by_gamma() {
        let k = kernel(51, 0.2);
        let r = MarginalRewards {
            r1: (0..51).map(|i| [1.0 - 0.03 * i as f64, 1.4 - 0.05 * i as f64]).collect(),
            r0: (0..51).map(|i| 0.5 - 0.02 * i as f64).collect(),
        };
        let gamma = 0.9;
        let mut prev = vec![[0.0; 2]; 51];
        let mut cur = bellman_operator(&r, &k, 0.75, gamma, &prev);
        for _ in 0..200 {
            let next = bellman_operator(&r, &k, 0.75, gamma, &cur);
            let d_new = sup_distance(&next, &cur);
            let d_old = sup_distance(&cur, &prev);
            assert!(d_new <= gamma * d_old + 1e-12);
            prev = cur;
            cur = next;
        }
    }

    #[test]
    fn h_with_full_availability_uses_available_values() {
        let k = kernel(3, 0.2);
        let v = ValueTable {
            v: vec![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]],
            residual: 0.0,
            iterations: 0,
        };
        let h = compute_h(&v, &k, 1.0).unwrap();
        for x in 0..3 {
            for a in [false, true] {
                let expect: f64 = k.row(x, a).iter().map(|&(j, p)| p * v.v[j][1]).sum();
                assert!((h.h[x][usize::from(a)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn h_matches_hand_expansion_on_three_points() {
        // grid {0, 10, 20}, λ = 0.95, p_sed = 0.2, p_avail = 0.6
        let k = kernel(3, 0.2);
        let v = ValueTable {
            v: vec![[1.0, 2.0], [3.0, 5.0], [7.0, 11.0]],
            residual: 0.0,
            iterations: 0,
        };
        let p = 0.6;
        let wv = |j: usize| p * v.v[j][1] + (1.0 - p) * v.v[j][0];
        // x = 0: target 1 → 0.9 at 0, 0.1 at 10; target 0 → all at 0
        let h01 = 0.9 * wv(0) + 0.1 * wv(1);
        let h00 = 0.2 * h01 + 0.8 * wv(0);
        // x = 10: target 10.5 → 0.95 at 10, 0.05 at 20; target 9.5 → 0.05 at 0, 0.95 at 10
        let h11 = 0.95 * wv(1) + 0.05 * wv(2);
        let h10 = 0.2 * h11 + 0.8 * (0.05 * wv(0) + 0.95 * wv(1));
        // x = 20: target 20 → all at 20; target 19 → 0.1 at 10, 0.9 at 20
        let h21 = wv(2);
        let h20 = 0.2 * h21 + 0.8 * (0.1 * wv(1) + 0.9 * wv(2));
        let h = compute_h(&v, &k, p).unwrap();
        let expect = [[h00, h01], [h10, h11], [h20, h21]];
        for x in 0..3 {
            for a in 0..2 {
                assert!((h.h[x][a] - expect[x][a]).abs() < 1e-12, "x={x} a={a}");
            }
        }
    }

    fn future(grid: &DosageGrid, h: Vec<[f64; 2]>) -> FutureValue {
        FutureValue {
            grid: grid.clone(),
            v: vec![[0.0; 2]; h.len()],
            h,
            p_avail: 0.8,
        }
    }

    #[test]
    fn blend_examples() {
        let g = DosageGrid::uniform(3, 20.0).unwrap();
        let h1 = future(&g, vec![[1.0, 0.5], [2.0, 1.0], [3.0, 1.5]]);
        let hs = future(&g, vec![[4.0, 4.0], [5.0, 3.0], [6.0, 2.0]]);
        let t = blend_and_eta(&hs, &h1, 0.0, 0.9).unwrap();
        assert_eq!(t.h, h1.h);
        let t = blend_and_eta(&hs, &h1, 1.0, 0.9).unwrap();
        assert_eq!(t.h, hs.h);
        assert!((t.eta[1] - 0.9 * 2.0).abs() < 1e-12);
        let t = blend_and_eta(&hs, &h1, 0.4, 0.0).unwrap();
        assert!(t.eta.iter().all(|&e| e == 0.0));

        let other = DosageGrid::uniform(4, 20.0).unwrap();
        let bad = future(&other, vec![[0.0; 2]; 4]);
        assert!(matches!(blend_and_eta(&bad, &h1, 0.5, 0.9), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn eta_lookup_interpolates() {
        let g = DosageGrid::uniform(5, 20.0).unwrap();
        let mut t = ProxyTables::zero(g);
        t.eta = vec![0.0, 1.0, 4.0, 9.0, 16.0];
        assert_eq!(t.eta_lookup(10.0).unwrap(), 4.0);
        assert_eq!(t.eta_lookup(20.0).unwrap(), 16.0);
        assert!((t.eta_lookup(7.5).unwrap() - 2.5).abs() < 1e-12);
        assert!(t.eta_lookup(20.5).is_err());
        assert!(t.eta_lookup(-1.0).is_err());
    }
}
