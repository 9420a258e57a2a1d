//! WebAssembly bindings for the browser demo in `www/`.
//!
//! A small synthetic cohort is generated and calibrated once; the page then
//! asks for η curves, the resulting selection probabilities, and paired
//! episodes of the proposed algorithm and the bandit.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dosage_ts::calibration::{build_envs, group_participants, initial_h, BatchFit, Calibration, ParticipantData};
use dosage_ts::corpus::CorpusSpec;
use dosage_ts::env::{mix_seed, ParticipantEnv, Trajectory};
use dosage_ts::experiment::{LearnerFactory, GAMMA_GRID};
use dosage_ts::features::{clip_probability, DOSAGE_INDEX};
use dosage_ts::proxy::{DosageKernel, ProxyTables};
use dosage_ts::selector::treatment_prob;
use dosage_ts::{AlgoConfig, Algorithm, GaussianBelief, Result};

pub const DEMO_PARTICIPANTS: usize = 8;

/// Dosage-dependent slices of two paired episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeView {
    pub user_id: u32,
    pub dosage: Vec<f64>,
    /// Selection probability at available times, `null` otherwise.
    pub pi: Vec<Option<f64>>,
    pub eta: Vec<Option<f64>>,
    pub daily_proposed: Vec<f64>,
    pub daily_bandit: Vec<f64>,
    pub total_proposed: f64,
    pub total_bandit: f64,
}

#[wasm_bindgen]
pub struct Demo {
    cfg: AlgoConfig,
    data: Vec<ParticipantData>,
    batch: BatchFit,
    calibration: Calibration,
    envs: Vec<ParticipantEnv>,
}

fn js(e: dosage_ts::Error) -> JsError {
    JsError::new(&e.to_string())
}

impl Demo {
    pub fn build(seed: u64) -> Result<Self> {
        let cfg = AlgoConfig::default();
        let rows = CorpusSpec {
            n_participants: DEMO_PARTICIPANTS,
            ..CorpusSpec::default()
        }
        .generate(seed)?;
        let data = group_participants(&rows, &cfg)?;
        let batch = BatchFit::fit(&data, &cfg)?;
        let calibration = Calibration::from_batch(&batch, &data, &cfg, &GAMMA_GRID)?;
        let envs = build_envs(&data, &batch, &cfg, seed)?;
        Ok(Self {
            cfg,
            data,
            batch,
            calibration,
            envs,
        })
    }

    /// Day-one η over the dosage grid, with the fitted dosage coefficients
    /// multiplied by `burden`.
    pub fn eta(&self, gamma: f64, burden: f64) -> Result<Vec<f64>> {
        let mut coef = self.batch.coefficients();
        for v in [&mut coef.alpha_avail, &mut coef.beta, &mut coef.alpha_unavail] {
            v[DOSAGE_INDEX] *= burden;
        }
        let cfg = self.cfg.with_tuning(gamma, 0.0);
        let h1 = initial_h(&self.data, &self.batch.scaler, &coef, &cfg, gamma)?;
        Ok(ProxyTables::initial(&h1, gamma)?.eta)
    }

    /// Clipped probability of treating at each grid dosage when the effect
    /// belief is `N(effect_mean, effect_sd²)`.
    pub fn selection(&self, gamma: f64, burden: f64, effect_mean: f64, effect_sd: f64) -> Result<Vec<f64>> {
        let belief = GaussianBelief::diagonal(&[effect_mean], &[effect_sd])?;
        let one = belief.mean.clone().map(|_| 1.0);
        self.eta(gamma, burden)?
            .into_iter()
            .map(|e| clip_probability(treatment_prob(&one, &belief, e)?, self.cfg.epsilon0, self.cfg.epsilon1))
            .collect()
    }

    /// The proposed algorithm at `(gamma, w)` and the bandit on the same
    /// participant, sharing every random draw.
    pub fn episode(&self, participant: usize, gamma: f64, w: f64, seed: u64) -> Result<EpisodeView> {
        let env = self
            .envs
            .get(participant)
            .ok_or_else(|| dosage_ts::Error::Config(format!("participant index {participant} out of range")))?;
        let factory = LearnerFactory::new(&self.calibration)?;
        let seed = mix_seed(seed, &[u64::from(env.user_id)]);
        let proposed = factory.run(env, Algorithm::Proposed { gamma, w }, seed)?;
        let bandit: Trajectory = factory.run(env, Algorithm::Bandit, seed)?;
        let avail = |s: &dosage_ts::env::TrajectoryStep, v: f64| s.record.context.available.then_some(v);
        Ok(EpisodeView {
            user_id: env.user_id,
            dosage: proposed.steps.iter().map(|s| s.record.context.dosage).collect(),
            pi: proposed.steps.iter().map(|s| avail(s, s.record.pi)).collect(),
            eta: proposed.steps.iter().map(|s| s.eta).collect(),
            daily_proposed: proposed.daily_reward,
            daily_bandit: bandit.daily_reward,
            total_proposed: proposed.total_reward,
            total_bandit: bandit.total_reward,
        })
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        Ok(DosageKernel::for_config(&self.cfg)?.grid().points().to_vec())
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Self::build(u64::from(seed)).map_err(js)
    }

    #[wasm_bindgen(js_name = dosageGrid)]
    pub fn dosage_grid(&self) -> std::result::Result<Vec<f64>, JsError> {
        self.grid().map_err(js)
    }

    /// Discount rates an episode can be run at.
    #[wasm_bindgen(js_name = gammaGrid)]
    pub fn gamma_grid(&self) -> Vec<f64> {
        self.calibration.initial_h.iter().map(|h| h.gamma).collect()
    }

    #[wasm_bindgen(js_name = participants)]
    pub fn participants(&self) -> usize {
        self.envs.len()
    }

    #[wasm_bindgen(js_name = etaCurve)]
    pub fn eta_curve(&self, gamma: f64, burden: f64) -> std::result::Result<Vec<f64>, JsError> {
        self.eta(gamma, burden).map_err(js)
    }

    #[wasm_bindgen(js_name = selectionCurve)]
    pub fn selection_curve(
        &self,
        gamma: f64,
        burden: f64,
        effect_mean: f64,
        effect_sd: f64,
    ) -> std::result::Result<Vec<f64>, JsError> {
        self.selection(gamma, burden, effect_mean, effect_sd).map_err(js)
    }

    /// JSON-encoded [`EpisodeView`].
    #[wasm_bindgen(js_name = runEpisode)]
    pub fn run_episode(&self, participant: usize, gamma: f64, w: f64, seed: u32) -> std::result::Result<String, JsError> {
        let view = self.episode(participant, gamma, w, u64::from(seed)).map_err(js)?;
        serde_json::to_string(&view).map_err(|e| JsError::new(&e.to_string()))
    }
}
