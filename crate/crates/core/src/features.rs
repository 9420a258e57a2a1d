//! Decision-time state, feature construction, dosage bookkeeping and clipping.
//!
//! Treatment-effect features `f` and baseline features `g` share a fixed
//! layout. Both carry a leading intercept; every other entry is standardized
//! to `[0, 1]` with a frozen min/max table.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PRIOR30_STEPS: &str = "prior30_steps";
pub const YESTERDAY_STEPS: &str = "yesterday_steps";
pub const TEMPERATURE: &str = "temperature";
pub const LOCATION: &str = "location";
pub const STEP_VARIATION: &str = "step_variation";
pub const ENGAGEMENT: &str = "engagement";
pub const DOSAGE: &str = "dosage";

/// Names of the entries of `f`, intercept first.
pub const F_NAMES: [&str; 5] = ["intercept", DOSAGE, ENGAGEMENT, LOCATION, STEP_VARIATION];
/// Names of the entries of `g`, intercept first.
pub const G_NAMES: [&str; 8] = [
    "intercept",
    DOSAGE,
    ENGAGEMENT,
    LOCATION,
    STEP_VARIATION,
    PRIOR30_STEPS,
    YESTERDAY_STEPS,
    TEMPERATURE,
];
pub const F_DIM: usize = F_NAMES.len();
pub const G_DIM: usize = G_NAMES.len();

/// Position of the dosage entry in both `f` and `g`.
pub const DOSAGE_INDEX: usize = 1;

/// Raw context features observed at a decision time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawContext {
    pub prior30_steps: f64,
    pub yesterday_steps: f64,
    pub temperature: f64,
    /// 1 at home or work, 0 elsewhere.
    pub location: f64,
    pub step_variation: f64,
    pub engagement: f64,
}

impl RawContext {
    pub const NAMES: [&'static str; 6] = [
        PRIOR30_STEPS,
        YESTERDAY_STEPS,
        TEMPERATURE,
        LOCATION,
        STEP_VARIATION,
        ENGAGEMENT,
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            PRIOR30_STEPS => self.prior30_steps,
            YESTERDAY_STEPS => self.yesterday_steps,
            TEMPERATURE => self.temperature,
            LOCATION => self.location,
            STEP_VARIATION => self.step_variation,
            ENGAGEMENT => self.engagement,
            _ => return None,
        })
    }

    fn values(&self) -> [f64; 6] {
        [
            self.prior30_steps,
            self.yesterday_steps,
            self.temperature,
            self.location,
            self.step_variation,
            self.engagement,
        ]
    }
}

/// One decision time's observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionContext {
    /// 1-based study day.
    pub day: usize,
    /// 1-based slot within the day.
    pub slot: usize,
    pub available: bool,
    pub raw: RawContext,
    pub dosage: f64,
}

impl DecisionContext {
    /// Linear 1-based time index.
    pub fn time_index(&self, slots_per_day: usize) -> usize {
        slots_per_day * (self.day - 1) + self.slot
    }
}

/// A logged decision: context, selection probability, action and reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub context: DecisionContext,
    /// Probability actually used at selection time; 0 when unavailable.
    pub pi: f64,
    pub action: bool,
    pub reward: f64,
}

impl HistoryRecord {
    pub fn new(context: DecisionContext, pi: f64, action: bool, reward: f64) -> Result<Self> {
        if !context.available && (action || pi != 0.0) {
            return Err(Error::Unavailable);
        }
        if !(0.0..=1.0).contains(&pi) {
            return Err(Error::ProbabilityOutOfRange(pi));
        }
        Ok(Self {
            context,
            pi,
            action,
            reward,
        })
    }
}

/// Min/max of a raw feature used for standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn standardize(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// Frozen standardization table, serialized as `{name: {"min": x, "max": y}}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scaler(pub BTreeMap<String, Range>);

impl Scaler {
    /// Min/max of every raw feature over `rows`, plus the analytic dosage range.
    ///
    /// A feature that is constant over `rows` gets the range `[v, v + 1]`, so
    /// it standardizes to 0.
    pub fn fit<'a, I>(rows: I, lambda: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a RawContext>,
    {
        let mut lo = [f64::INFINITY; 6];
        let mut hi = [f64::NEG_INFINITY; 6];
        let mut n = 0usize;
        for raw in rows {
            for (k, v) in raw.values().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InsufficientData("cannot fit a scaler on zero rows".into()));
        }
        let mut table = BTreeMap::new();
        for (k, name) in RawContext::NAMES.iter().enumerate() {
            let max = if hi[k] > lo[k] { hi[k] } else { lo[k] + 1.0 };
            table.insert(name.to_string(), Range { min: lo[k], max });
        }
        table.insert(
            DOSAGE.to_string(),
            Range {
                min: 0.0,
                max: 1.0 / (1.0 - lambda),
            },
        );
        Ok(Self(table))
    }

    pub fn range(&self, name: &str) -> Result<Range> {
        let r = self
            .0
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingFeature(name.to_string()))?;
        if !(r.max > r.min) {
            return Err(Error::Config(format!(
                "scaler range for `{name}` has max {} <= min {}",
                r.max, r.min
            )));
        }
        Ok(r)
    }

    pub fn standardize(&self, name: &str, v: f64) -> Result<f64> {
        Ok(self.range(name)?.standardize(v))
    }
}

/// Treatment-effect and baseline feature vectors for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub f: DVector<f64>,
    pub g: DVector<f64>,
}

/// Standardized raw features without the dosage entry: (engagement, location,
/// step variation, prior-30-min steps, yesterday steps, temperature).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StandardizedContext(pub [f64; 6]);

impl StandardizedContext {
    pub fn new(raw: &RawContext, scaler: &Scaler) -> Result<Self> {
        Ok(Self([
            scaler.standardize(ENGAGEMENT, raw.engagement)?,
            scaler.standardize(LOCATION, raw.location)?,
            scaler.standardize(STEP_VARIATION, raw.step_variation)?,
            scaler.standardize(PRIOR30_STEPS, raw.prior30_steps)?,
            scaler.standardize(YESTERDAY_STEPS, raw.yesterday_steps)?,
            scaler.standardize(TEMPERATURE, raw.temperature)?,
        ]))
    }

    /// Assemble `f` and `g` with an already standardized dosage.
    pub fn with_dosage(&self, dosage_std: f64) -> FeaturePair {
        let s = &self.0;
        FeaturePair {
            f: DVector::from_column_slice(&[1.0, dosage_std, s[0], s[1], s[2]]),
            g: DVector::from_column_slice(&[1.0, dosage_std, s[0], s[1], s[2], s[3], s[4], s[5]]),
        }
    }
}

/// Build `(f, g)` for a raw context at the given dosage.
pub fn build_features(raw: &RawContext, dosage: f64, scaler: &Scaler) -> Result<FeaturePair> {
    let ctx = StandardizedContext::new(raw, scaler)?;
    Ok(ctx.with_dosage(scaler.standardize(DOSAGE, dosage)?))
}

/// `X_{t+1} = λ X_t + 1{event}`.
pub fn update_dosage(prev: f64, event: bool, lambda: f64) -> Result<f64> {
    let bound = 1.0 / (1.0 - lambda);
    if !(prev >= 0.0 && prev < bound) {
        return Err(Error::DosageOutOfRange { value: prev, bound });
    }
    Ok(lambda * prev + if event { 1.0 } else { 0.0 })
}

/// `min(1 − ε0, max(p, ε1))`.
pub fn clip_probability(p: f64, epsilon0: f64, epsilon1: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    Ok(p.max(epsilon1).min(1.0 - epsilon0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_scaler() -> Scaler {
        let mut t = BTreeMap::new();
        for name in RawContext::NAMES {
            t.insert(name.to_string(), Range { min: 0.0, max: 10.0 });
        }
        t.insert(DOSAGE.into(), Range { min: 0.0, max: 20.0 });
        Scaler(t)
    }

    #[test]
    fn dosage_examples() {
        assert_eq!(update_dosage(0.0, true, 0.95).unwrap(), 1.0);
        assert_eq!(update_dosage(1.0, false, 0.95).unwrap(), 0.95);
        let near = update_dosage(20.0 - 1e-9, true, 0.95).unwrap();
        assert!(near < 20.0 && (near - 20.0).abs() < 1e-8);
        assert!(update_dosage(20.0, true, 0.95).is_err());
        assert!(update_dosage(-0.1, false, 0.95).is_err());
    }

    #[test]
    fn dosage_supremum_by_iteration() {
        let mut x: f64 = 0.0;
        let mut max = 0.0f64;
        for _ in 0..10_000 {
            x = 0.95 * x + 1.0;
            max = max.max(x);
        }
        assert!(max < 20.0);
        assert!(20.0 - max < 1e-10);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_probability(0.5, 0.2, 0.1).unwrap(), 0.5);
        assert!((clip_probability(0.95, 0.2, 0.1).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(clip_probability(0.02, 0.2, 0.1).unwrap(), 0.1);
        assert!(clip_probability(1.2, 0.2, 0.1).is_err());
    }

    #[test]
    fn feature_examples() {
        let scaler = unit_scaler();
        let fp = build_features(&RawContext::default(), 10.0, &scaler).unwrap();
        assert_eq!(fp.f[DOSAGE_INDEX], 0.5);
        assert_eq!(fp.g[DOSAGE_INDEX], 0.5);

        let fp = build_features(&RawContext::default(), 0.0, &scaler).unwrap();
        assert_eq!(fp.f.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(fp.g.len(), G_DIM);

        // max + 1 clamps to 1, matching a direct (v - min)/(max - min) oracle clamped by hand
        let raw = RawContext {
            temperature: 11.0,
            ..Default::default()
        };
        let oracle = ((11.0f64 - 0.0) / (10.0 - 0.0)).min(1.0);
        let fp = build_features(&raw, 0.0, &scaler).unwrap();
        assert_eq!(fp.g[7], oracle);
        assert_eq!(fp.g[7], 1.0);
    }

    #[test]
    fn missing_feature_is_named() {
        let mut scaler = unit_scaler();
        scaler.0.remove(TEMPERATURE);
        match build_features(&RawContext::default(), 0.0, &scaler) {
            Err(Error::MissingFeature(n)) => assert_eq!(n, TEMPERATURE),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scaler_json_shape() {
        let scaler = unit_scaler();
        let v: serde_json::Value = serde_json::to_value(&scaler).unwrap();
        assert_eq!(v["temperature"]["min"], 0.0);
        assert_eq!(v["dosage"]["max"], 20.0);
        let back: Scaler = serde_json::from_value(v).unwrap();
        assert_eq!(back, scaler);
    }

    #[test]
    fn constant_feature_fits_to_zero() {
        let rows = vec![RawContext::default(); 3];
        let scaler = Scaler::fit(&rows, 0.95).unwrap();
        let fp = build_features(&rows[0], 0.0, &scaler).unwrap();
        assert!(fp.g.iter().skip(1).all(|&v| v == 0.0));
    }

    #[test]
    fn unavailable_record_rejects_action() {
        let ctx = DecisionContext {
            day: 1,
            slot: 1,
            available: false,
            raw: RawContext::default(),
            dosage: 0.0,
        };
        assert!(HistoryRecord::new(ctx, 0.0, true, 1.0).is_err());
        assert!(HistoryRecord::new(ctx, 0.5, false, 1.0).is_err());
        assert!(HistoryRecord::new(ctx, 0.0, false, 1.0).is_ok());
        assert_eq!(ctx.time_index(5), 1);
    }

    proptest! {
        #[test]
        fn dosage_stays_bounded(events in proptest::collection::vec(any::<bool>(), 1..2000)) {
            let mut x = 0.0;
            for e in events {
                x = update_dosage(x, e, 0.95).unwrap();
                prop_assert!((0.0..20.0).contains(&x));
            }
        }

        #[test]
        fn clip_idempotent_and_monotone(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let c = clip_probability(p, 0.2, 0.1).unwrap();
            prop_assert_eq!(clip_probability(c, 0.2, 0.1).unwrap(), c);
            prop_assert!((0.1..=0.8).contains(&c));
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(clip_probability(lo, 0.2, 0.1).unwrap() <= clip_probability(hi, 0.2, 0.1).unwrap());
        }

        #[test]
        fn standardization_invariant_to_affine_recoding(
            vals in proptest::collection::vec(-50.0f64..50.0, 3..30),
            scale in 0.1f64..10.0,
            shift in -100.0f64..100.0,
        ) {
            let rows: Vec<RawContext> = vals.iter().map(|&v| RawContext { temperature: v, ..Default::default() }).collect();
            let recoded: Vec<RawContext> = vals.iter().map(|&v| RawContext { temperature: scale * v + shift, ..Default::default() }).collect();
            let a = Scaler::fit(&rows, 0.95).unwrap();
            let b = Scaler::fit(&recoded, 0.95).unwrap();
            for (r, q) in rows.iter().zip(&recoded) {
                let x = build_features(r, 3.0, &a).unwrap();
                let y = build_features(q, 3.0, &b).unwrap();
                for (u, v) in x.g.iter().zip(y.g.iter()) {
                    prop_assert!((u - v).abs() < 1e-9);
                }
            }
        }
    }
}
