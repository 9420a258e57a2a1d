#![allow(dead_code)]

use dosage_ts::corpus::{generator_scaler, CorpusRow, CorpusSpec};
use dosage_ts::features::{DecisionContext, HistoryRecord, RawContext, Scaler};
use dosage_ts::posterior::JointPrior;
use dosage_ts::GaussianBelief;
use nalgebra::DVector;
use rand::Rng;

pub const LAMBDA: f64 = 0.95;

pub fn scaler() -> Scaler {
    generator_scaler(LAMBDA)
}

pub fn random_raw<R: Rng>(rng: &mut R) -> RawContext {
    RawContext {
        prior30_steps: rng.random_range(-100.0..2200.0),
        yesterday_steps: rng.random_range(0.0..20000.0),
        temperature: rng.random_range(-10.0..35.0),
        location: f64::from(u8::from(rng.random_bool(0.5))),
        step_variation: rng.random_range(0.0..3.0),
        engagement: rng.random_range(0.0..1.0),
    }
}

/// A chronologically valid history with random contexts, probabilities,
/// actions and rewards.
pub fn random_history<R: Rng>(rng: &mut R, len: usize) -> Vec<HistoryRecord> {
    let mut dosage = 0.0;
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let available = rng.random_bool(0.8);
        let (pi, action) = if available {
            let pi = rng.random_range(0.1..0.8);
            (pi, rng.random_bool(pi))
        } else {
            (0.0, false)
        };
        let context = DecisionContext {
            day: t / 5 + 1,
            slot: t % 5 + 1,
            available,
            raw: random_raw(rng),
            dosage,
        };
        out.push(HistoryRecord::new(context, pi, action, rng.random_range(-1.0..8.0)).unwrap());
        dosage = LAMBDA * dosage + f64::from(u8::from(action || rng.random_bool(0.2)));
    }
    out
}

pub fn random_belief<R: Rng>(rng: &mut R, dim: usize) -> GaussianBelief {
    let mean: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let sd: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..2.0)).collect();
    GaussianBelief::diagonal(&mean, &sd).unwrap()
}

pub fn random_prior<R: Rng>(rng: &mut R) -> JointPrior {
    JointPrior::new(random_belief(rng, 8), random_belief(rng, 5))
}

/// `(v − min)/(max − min)` clamped to [0, 1], written out longhand.
pub fn standardize(scaler: &Scaler, name: &str, v: f64) -> f64 {
    let r = scaler.0[name];
    let z = (v - r.min) / (r.max - r.min);
    if z < 0.0 {
        0.0
    } else if z > 1.0 {
        1.0
    } else {
        z
    }
}

/// Feature vectors assembled independently of the library's layout code.
pub fn oracle_features(raw: &RawContext, dosage: f64, scaler: &Scaler) -> (DVector<f64>, DVector<f64>) {
    let d = standardize(scaler, "dosage", dosage);
    let e = standardize(scaler, "engagement", raw.engagement);
    let l = standardize(scaler, "location", raw.location);
    let v = standardize(scaler, "step_variation", raw.step_variation);
    let p = standardize(scaler, "prior30_steps", raw.prior30_steps);
    let y = standardize(scaler, "yesterday_steps", raw.yesterday_steps);
    let t = standardize(scaler, "temperature", raw.temperature);
    (
        DVector::from_vec(vec![1.0, d, e, l, v]),
        DVector::from_vec(vec![1.0, d, e, l, v, p, y, t]),
    )
}

pub fn small_corpus(n_participants: usize, seed: u64) -> Vec<CorpusRow> {
    CorpusSpec {
        n_participants,
        ..CorpusSpec::default()
    }
    .generate(seed)
    .unwrap()
}
