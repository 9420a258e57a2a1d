use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Algorithm inputs shared by the learner, the proxy MDP and the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    /// Dosage decay per decision time.
    pub lambda: f64,
    /// Upper clip margin: π ≤ 1 − epsilon0.
    pub epsilon0: f64,
    /// Lower clip floor: π ≥ epsilon1.
    pub epsilon1: f64,
    /// Discount rate of the proxy MDP.
    pub gamma: f64,
    /// Weight on the participant's own future-value estimate when blending with the initial table.
    pub w: f64,
    /// Reward noise variance (log step count squared).
    pub sigma2: f64,
    /// Probability of an anti-sedentary suggestion between decision times.
    pub p_sed: f64,
    pub slots_per_day: usize,
    pub n_days: usize,
    pub dosage_grid_size: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            lambda: 0.95,
            epsilon0: 0.2,
            epsilon1: 0.1,
            gamma: 0.9,
            w: 0.5,
            sigma2: 1.0,
            p_sed: 0.2,
            slots_per_day: 5,
            n_days: 90,
            dosage_grid_size: 201,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        let closed = |v: f64| (0.0..=1.0).contains(&v);
        if !open(self.lambda) {
            return Err(Error::Config(format!("lambda {} not in (0,1)", self.lambda)));
        }
        if !open(self.epsilon0) || !open(self.epsilon1) {
            return Err(Error::Config("epsilon0 and epsilon1 must lie in (0,1)".into()));
        }
        if self.epsilon1 >= 1.0 - self.epsilon0 {
            return Err(Error::Config(format!(
                "empty clip interval [{}, {}]",
                self.epsilon1,
                1.0 - self.epsilon0
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} not in [0,1)", self.gamma)));
        }
        if !closed(self.w) {
            return Err(Error::Config(format!("w {} not in [0,1]", self.w)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 {} must be positive", self.sigma2)));
        }
        if !closed(self.p_sed) {
            return Err(Error::Config(format!("p_sed {} not in [0,1]", self.p_sed)));
        }
        if self.slots_per_day == 0 || self.n_days == 0 {
            return Err(Error::Config("slots_per_day and n_days must be positive".into()));
        }
        if self.dosage_grid_size < 2 {
            return Err(Error::Config("dosage_grid_size must be at least 2".into()));
        }
        Ok(())
    }

    /// Supremum of the dosage recursion, 1/(1−λ).
    pub fn dosage_bound(&self) -> f64 {
        1.0 / (1.0 - self.lambda)
    }

    pub fn horizon(&self) -> usize {
        self.slots_per_day * self.n_days
    }

    pub fn with_tuning(&self, gamma: f64, w: f64) -> Self {
        Self {
            gamma,
            w,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = AlgoConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.horizon(), 450);
        assert!((cfg.dosage_bound() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_clip_interval() {
        let cfg = AlgoConfig {
            epsilon0: 0.6,
            epsilon1: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: AlgoConfig = serde_json::from_str(r#"{"gamma": 0.5}"#).unwrap();
        assert_eq!(cfg.gamma, 0.5);
        assert_eq!(cfg.lambda, 0.95);
        assert!(serde_json::from_str::<AlgoConfig>(r#"{"gama": 0.5}"#).is_err());
    }
}
