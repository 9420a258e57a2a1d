//! Dosage-aware action-centered Thompson sampling for mobile-health
//! interventions, with the calibration, simulation and evaluation harness
//! around it.
//!
//! The online algorithm lives in [`learner`]: each night it refits a Bayesian
//! linear regression on the participant's own history ([`posterior`]), solves
//! a small dosage MDP to estimate the delayed cost of treating at each dosage
//! level ([`proxy`]), and at each decision time randomizes with the clipped
//! probability that the treatment effect exceeds that cost ([`selector`]).

pub mod baselines;
pub mod belief;
pub mod calibration;
pub mod config;
pub mod corpus;
pub mod env;
pub mod error;
pub mod experiment;
pub mod features;
pub mod learner;
pub mod posterior;
pub mod proxy;
pub mod regression;
pub mod selector;

pub use belief::GaussianBelief;
pub use config::AlgoConfig;
pub use error::{Error, Result};
pub use features::{DecisionContext, FeaturePair, HistoryRecord, Scaler};
pub use learner::{Algorithm, BanditLearner, Learner, ProposedLearner};
pub use proxy::ProxyTables;
