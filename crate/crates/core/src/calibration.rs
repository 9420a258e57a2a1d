//! Training-phase fits: pooled and per-participant regressions, prior
//! construction, noise variance, the initial future-value table and the
//! simulation environments built from a batch of participants.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::GaussianBelief;
use crate::config::AlgoConfig;
use crate::corpus::CorpusRow;
use crate::env::{extend_sequence, mix_seed, EnvCoefficients, ParticipantEnv, Timestep};
use crate::error::{Error, Result};
use crate::features::{
    build_features, update_dosage, FeaturePair, Scaler, ENGAGEMENT, F_DIM, F_NAMES, G_DIM, G_NAMES,
};
use crate::posterior::JointPrior;
use crate::proxy::{marginal_rewards, DosageKernel, FutureValue, RewardCoefficients};
use crate::regression::{fit_clustered, OlsFit};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

const EXTENSION_TAG: u64 = 0xE7;

/// One participant's chronologically ordered rows with reconstructed dosage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantData {
    pub user_id: u32,
    pub rows: Vec<CorpusRow>,
    pub dosage: Vec<f64>,
}

impl ParticipantData {
    pub fn features(&self, scaler: &Scaler) -> Result<Vec<FeaturePair>> {
        self.rows
            .iter()
            .zip(&self.dosage)
            .map(|(r, &x)| build_features(&r.raw(), x, scaler))
            .collect()
    }
}

/// Group rows by participant, order by (day, slot) and rebuild dosage from the
/// logged actions: `X_1 = 0`, `X_{t+1} = λ X_t + A_t`.
pub fn group_participants(rows: &[CorpusRow], cfg: &AlgoConfig) -> Result<Vec<ParticipantData>> {
    let mut by_user: BTreeMap<u32, Vec<CorpusRow>> = BTreeMap::new();
    for r in rows {
        by_user.entry(r.user_id).or_default().push(*r);
    }
    by_user
        .into_iter()
        .map(|(user_id, mut rows)| {
            rows.sort_by_key(|r| (r.day, r.slot));
            for (i, r) in rows.iter().enumerate() {
                let t = cfg.slots_per_day * (r.day.max(1) - 1) + r.slot;
                if r.day == 0 || r.slot == 0 || r.slot > cfg.slots_per_day || t != i + 1 {
                    return Err(Error::InsufficientData(format!(
                        "participant {user_id}: rows are not consecutive decision times at day {} slot {}",
                        r.day, r.slot
                    )));
                }
            }
            let mut dosage = Vec::with_capacity(rows.len());
            let mut x = 0.0;
            for r in &rows {
                dosage.push(x);
                x = update_dosage(x, r.action, cfg.lambda)?;
            }
            Ok(ParticipantData {
                user_id,
                rows,
                dosage,
            })
        })
        .collect()
}

/// The two regressions of the training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardModel {
    /// `R = g^T α + A f^T β` at available times.
    Available,
    /// `R = g^T α` at unavailable times.
    Unavailable,
}

/// `g` entries estimable from data (engagement was not collected).
const G_FIT: [usize; 7] = [0, 1, 3, 4, 5, 6, 7];
const F_FIT: [usize; 4] = [0, 1, 3, 4];
const ENGAGEMENT_INDEX: usize = 2;

impl RewardModel {
    pub fn column_names(self) -> Vec<String> {
        let g = G_FIT.iter().map(|&j| format!("g.{}", G_NAMES[j]));
        match self {
            RewardModel::Available => g
                .chain(F_FIT.iter().map(|&j| format!("a*f.{}", F_NAMES[j])))
                .collect(),
            RewardModel::Unavailable => g.collect(),
        }
    }

    fn includes(self, row: &CorpusRow) -> bool {
        match self {
            RewardModel::Available => row.available,
            RewardModel::Unavailable => !row.available,
        }
    }

    fn design_row(self, pair: &FeaturePair, action: bool) -> Vec<f64> {
        let mut v: Vec<f64> = G_FIT.iter().map(|&j| pair.g[j]).collect();
        if self == RewardModel::Available {
            let a = f64::from(u8::from(action));
            v.extend(F_FIT.iter().map(|&j| a * pair.f[j]));
        }
        v
    }

    /// Map fitted coefficients into the full `(g)` or `(g, f)` layouts,
    /// with `fill` at the engagement positions.
    fn expand(self, fitted: &[f64], fill: f64) -> (Vec<f64>, Vec<f64>) {
        let mut g = vec![fill; G_DIM];
        for (k, &j) in G_FIT.iter().enumerate() {
            g[j] = fitted[k];
        }
        let mut f = Vec::new();
        if self == RewardModel::Available {
            f = vec![fill; F_DIM];
            for (k, &j) in F_FIT.iter().enumerate() {
                f[j] = fitted[G_FIT.len() + k];
            }
        }
        (g, f)
    }
}

struct Design {
    x: DMatrix<f64>,
    y: DVector<f64>,
    clusters: Vec<u32>,
    /// (participant index, row index) of each design row.
    origin: Vec<(usize, usize)>,
}

fn design(data: &[ParticipantData], scaler: &Scaler, model: RewardModel) -> Result<Design> {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut clusters = Vec::new();
    let mut origin = Vec::new();
    for (pi, p) in data.iter().enumerate() {
        for (ri, (r, &x)) in p.rows.iter().zip(&p.dosage).enumerate() {
            if !model.includes(r) {
                continue;
            }
            let pair = build_features(&r.raw(), x, scaler)?;
            rows.push(model.design_row(&pair, r.action));
            y.push(r.reward);
            clusters.push(p.user_id);
            origin.push((pi, ri));
        }
    }
    let ncols = model.column_names().len();
    let x = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    Ok(Design {
        x,
        y: DVector::from_vec(y),
        clusters,
        origin,
    })
}

/// Pooled (population) fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledFit {
    pub model: RewardModel,
    pub fit: OlsFit,
}

impl PooledFit {
    /// Coefficients in the full layouts, engagement set to 0.
    pub fn expanded(&self) -> (Vec<f64>, Vec<f64>) {
        self.model.expand(&self.fit.coef, 0.0)
    }
}

pub fn pooled_fit(data: &[ParticipantData], scaler: &Scaler, model: RewardModel) -> Result<PooledFit> {
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "pooled fit needs at least 2 participants, got {}",
            data.len()
        )));
    }
    let d = design(data, scaler, model)?;
    let fit = fit_clustered(&d.x, &d.y, &d.clusters, &model.column_names())?;
    Ok(PooledFit { model, fit })
}

/// Per-participant fits; rank-deficient participants are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonFits {
    pub model: RewardModel,
    pub fits: Vec<(u32, OlsFit)>,
    pub skipped: Vec<u32>,
}

impl PersonFits {
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        self.fits.iter().map(|(_, f)| f.coef.clone()).collect()
    }
}

pub fn person_fits(data: &[ParticipantData], scaler: &Scaler, model: RewardModel) -> Result<PersonFits> {
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for p in data {
        let d = design(std::slice::from_ref(p), scaler, model)?;
        match fit_clustered(&d.x, &d.y, &d.clusters, &model.column_names()) {
            Ok(f) => fits.push((p.user_id, f)),
            Err(Error::RankDeficient(_) | Error::InsufficientData(_) | Error::NotPositiveDefinite(_)) => {
                log::warn!("participant {}: {model:?} fit skipped (rank deficient)", p.user_id);
                skipped.push(p.user_id);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PersonFits {
        model,
        fits,
        skipped,
    })
}

/// Sample standard deviation (n − 1).
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Prior means and standard deviations in the full layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorComponents {
    pub g_mean: Vec<f64>,
    pub g_sd: Vec<f64>,
    pub f_mean: Vec<f64>,
    pub f_sd: Vec<f64>,
}

impl PriorComponents {
    pub fn joint(&self) -> Result<JointPrior> {
        Ok(JointPrior::new(
            GaussianBelief::diagonal(&self.g_mean, &self.g_sd)?,
            GaussianBelief::diagonal(&self.f_mean, &self.f_sd)?,
        ))
    }

    pub fn baseline(&self) -> Result<GaussianBelief> {
        GaussianBelief::diagonal(&self.g_mean, &self.g_sd)
    }
}

/// Significant features keep the pooled estimate and the across-person sd;
/// the rest get mean 0 and half that sd. Engagement gets mean 0 and the
/// average sd of the other features in its block.
pub fn build_prior(pooled: &PooledFit, persons: &PersonFits, alpha_level: f64) -> Result<PriorComponents> {
    if persons.fits.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "prior sd needs at least 2 participant fits, got {}",
            persons.fits.len()
        )));
    }
    if pooled.model != persons.model {
        return Err(Error::Config("pooled and person fits use different models".into()));
    }
    let coefs = persons.coefficients();
    let k = pooled.fit.coef.len();
    let mut mean = Vec::with_capacity(k);
    let mut sd = Vec::with_capacity(k);
    for j in 0..k {
        let across: Vec<f64> = coefs.iter().map(|c| c[j]).collect();
        let s = sample_sd(&across);
        if pooled.fit.p_values[j] < alpha_level {
            mean.push(pooled.fit.coef[j]);
            sd.push(s);
        } else {
            mean.push(0.0);
            sd.push(s / 2.0);
        }
    }
    let (g_mean, f_mean) = pooled.model.expand(&mean, 0.0);
    let (mut g_sd, mut f_sd) = pooled.model.expand(&sd, f64::NAN);
    let fill = |block: &mut Vec<f64>| {
        if block.is_empty() {
            return;
        }
        let others: Vec<f64> = block.iter().copied().filter(|v| !v.is_nan()).collect();
        let avg = others.iter().sum::<f64>() / others.len() as f64;
        block[ENGAGEMENT_INDEX] = avg;
    };
    fill(&mut g_sd);
    fill(&mut f_sd);
    debug_assert_eq!(G_NAMES[ENGAGEMENT_INDEX], ENGAGEMENT);
    Ok(PriorComponents {
        g_mean,
        g_sd,
        f_mean,
        f_sd,
    })
}

/// Everything estimated from one batch of participants.
#[derive(Debug, Clone)]
pub struct BatchFit {
    pub scaler: Scaler,
    pub pooled_avail: PooledFit,
    pub pooled_unavail: PooledFit,
    pub person_avail: PersonFits,
    pub person_unavail: PersonFits,
}

impl BatchFit {
    pub fn fit(data: &[ParticipantData], cfg: &AlgoConfig) -> Result<Self> {
        let raws: Vec<_> = data.iter().flat_map(|p| &p.rows).map(CorpusRow::raw).collect();
        let scaler = Scaler::fit(&raws, cfg.lambda)?;
        Ok(Self {
            pooled_avail: pooled_fit(data, &scaler, RewardModel::Available)?,
            pooled_unavail: pooled_fit(data, &scaler, RewardModel::Unavailable)?,
            person_avail: person_fits(data, &scaler, RewardModel::Available)?,
            person_unavail: person_fits(data, &scaler, RewardModel::Unavailable)?,
            scaler,
        })
    }

    /// Population coefficients in the generative-model layout.
    pub fn coefficients(&self) -> EnvCoefficients {
        let (alpha_avail, beta) = self.pooled_avail.expanded();
        let (alpha_unavail, _) = self.pooled_unavail.expanded();
        EnvCoefficients {
            alpha_avail,
            beta,
            alpha_unavail,
        }
    }

    /// Residuals from each participant's own fits, falling back to the pooled
    /// fit for a participant whose own fit was skipped.
    pub fn person_residuals(&self, data: &[ParticipantData]) -> Result<Vec<Vec<f64>>> {
        let mut out: Vec<Vec<f64>> = data.iter().map(|p| vec![f64::NAN; p.rows.len()]).collect();
        for (pooled, persons) in [
            (&self.pooled_avail, &self.person_avail),
            (&self.pooled_unavail, &self.person_unavail),
        ] {
            let model = pooled.model;
            let d = design(data, &self.scaler, model)?;
            let by_user: BTreeMap<u32, &OlsFit> = persons.fits.iter().map(|(u, f)| (*u, f)).collect();
            for (i, &(pi, ri)) in d.origin.iter().enumerate() {
                let fit = by_user.get(&data[pi].user_id).copied().unwrap_or(&pooled.fit);
                let pred: f64 = d.x.row(i).iter().zip(&fit.coef).map(|(a, b)| a * b).sum();
                out[pi][ri] = d.y[i] - pred;
            }
        }
        Ok(out)
    }
}

/// A fitted starting table `H₁` for one discount rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialH {
    pub gamma: f64,
    pub table: FutureValue,
}

/// Training-phase output consumed by the learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub config: AlgoConfig,
    pub scaler: Scaler,
    pub sigma2: f64,
    pub prior: PriorComponents,
    pub prior_unavail: PriorComponents,
    pub coefficients: EnvCoefficients,
    pub p_avail: f64,
    pub pooled_avail: PooledFit,
    pub pooled_unavail: PooledFit,
    pub skipped_participants: Vec<u32>,
    pub initial_h: Vec<InitialH>,
}

/// `H₁` from the batch: empirical contexts and availability, pooled rewards.
pub fn initial_h(
    data: &[ParticipantData],
    scaler: &Scaler,
    coef: &EnvCoefficients,
    cfg: &AlgoConfig,
    gamma: f64,
) -> Result<FutureValue> {
    let contexts: Vec<_> = data.iter().flat_map(|p| p.rows.iter().map(|r| r.raw())).collect();
    let total = contexts.len();
    if total == 0 {
        return Err(Error::InsufficientData("no rows for the initial table".into()));
    }
    let available = data.iter().flat_map(|p| &p.rows).filter(|r| r.available).count();
    let kernel = DosageKernel::for_config(cfg)?;
    let rc = RewardCoefficients {
        alpha: DVector::from_column_slice(&coef.alpha_avail),
        beta: DVector::from_column_slice(&coef.beta),
        alpha_unavail: DVector::from_column_slice(&coef.alpha_unavail),
    };
    let rewards = marginal_rewards(&contexts, &rc, kernel.grid(), scaler)?;
    FutureValue::solve(&rewards, &kernel, available as f64 / total as f64, gamma, None)
}

impl Calibration {
    /// Run the training phase on `data`, tabulating `H₁` for every discount
    /// rate in `gammas` (and the config's own).
    pub fn fit(data: &[ParticipantData], cfg: &AlgoConfig, gammas: &[f64]) -> Result<Self> {
        let batch = BatchFit::fit(data, cfg)?;
        Self::from_batch(&batch, data, cfg, gammas)
    }

    pub fn from_batch(batch: &BatchFit, data: &[ParticipantData], cfg: &AlgoConfig, gammas: &[f64]) -> Result<Self> {
        let prior = build_prior(&batch.pooled_avail, &batch.person_avail, SIGNIFICANCE_LEVEL)?;
        let prior_unavail = build_prior(&batch.pooled_unavail, &batch.person_unavail, SIGNIFICANCE_LEVEL)?;
        let sigma2 = batch.pooled_avail.fit.residual_variance;
        if !(sigma2 > 0.0) {
            return Err(Error::InsufficientData("zero residual variance".into()));
        }
        let config = AlgoConfig {
            sigma2,
            ..cfg.clone()
        };
        config.validate()?;
        let coefficients = batch.coefficients();
        let mut all: Vec<f64> = gammas.to_vec();
        all.push(cfg.gamma);
        all.sort_by(f64::total_cmp);
        all.dedup();
        let initial_h = all
            .into_iter()
            .map(|gamma| {
                Ok(InitialH {
                    gamma,
                    table: initial_h(data, &batch.scaler, &coefficients, &config, gamma)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<&CorpusRow> = data.iter().flat_map(|p| &p.rows).collect();
        let p_avail = rows.iter().filter(|r| r.available).count() as f64 / rows.len() as f64;
        let mut skipped = batch.person_avail.skipped.clone();
        skipped.extend(&batch.person_unavail.skipped);
        skipped.sort_unstable();
        skipped.dedup();
        Ok(Self {
            config,
            scaler: batch.scaler.clone(),
            sigma2,
            prior,
            prior_unavail,
            coefficients,
            p_avail,
            pooled_avail: batch.pooled_avail.clone(),
            pooled_unavail: batch.pooled_unavail.clone(),
            skipped_participants: skipped,
            initial_h,
        })
    }

    pub fn h1(&self, gamma: f64) -> Result<&FutureValue> {
        self.initial_h
            .iter()
            .find(|h| h.gamma == gamma)
            .map(|h| &h.table)
            .ok_or_else(|| Error::Config(format!("no initial table for gamma {gamma}")))
    }
}

/// Generative environments for a batch: fixed contexts, availability and
/// person-specific residuals, extended once to the configured horizon, with
/// the batch's population coefficients.
pub fn build_envs(
    data: &[ParticipantData],
    batch: &BatchFit,
    cfg: &AlgoConfig,
    seed: u64,
) -> Result<Vec<ParticipantEnv>> {
    let residuals = batch.person_residuals(data)?;
    let coef = batch.coefficients();
    data.iter()
        .zip(residuals)
        .map(|(p, res)| {
            let base: Vec<Timestep> = p
                .rows
                .iter()
                .zip(res)
                .map(|(r, e)| Timestep {
                    raw: r.raw(),
                    available: r.available,
                    residual: e,
                })
                .collect();
            let extension_seed = mix_seed(seed, &[EXTENSION_TAG, u64::from(p.user_id)]);
            let mut rng = ChaCha8Rng::seed_from_u64(extension_seed);
            let steps = extend_sequence(&base, cfg.slots_per_day, cfg.n_days, &mut rng)?;
            Ok(ParticipantEnv {
                user_id: p.user_id,
                steps,
                coef: coef.clone(),
                scaler: batch.scaler.clone(),
                lambda: cfg.lambda,
                p_sed: cfg.p_sed,
                slots_per_day: cfg.slots_per_day,
                extension_seed,
            })
        })
        .collect()
}
