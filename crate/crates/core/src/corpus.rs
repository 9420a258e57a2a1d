//! Study corpus: CSV schema, I/O and a synthetic generator standing in for a
//! randomized pilot study.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_features, update_dosage, RawContext, Range, Scaler, DOSAGE};

pub const CORPUS_COLUMNS: [&str; 13] = [
    "user_id",
    "day",
    "slot",
    "available",
    "prior30_steps",
    "yesterday_steps",
    "temperature",
    "location",
    "step_variation",
    "engagement",
    "action",
    "reward",
    "residual",
];

/// One decision time of one participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusRow {
    pub user_id: u32,
    pub day: usize,
    pub slot: usize,
    #[serde(with = "bool01")]
    pub available: bool,
    pub prior30_steps: f64,
    pub yesterday_steps: f64,
    pub temperature: f64,
    pub location: f64,
    pub step_variation: f64,
    pub engagement: f64,
    #[serde(with = "bool01")]
    pub action: bool,
    pub reward: f64,
    pub residual: f64,
}

impl CorpusRow {
    pub fn raw(&self) -> RawContext {
        RawContext {
            prior30_steps: self.prior30_steps,
            yesterday_steps: self.yesterday_steps,
            temperature: self.temperature,
            location: self.location,
            step_variation: self.step_variation,
            engagement: self.engagement,
        }
    }
}

mod bool01 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(serde::de::Error::custom(format!("expected 0 or 1, got {v}"))),
        }
    }
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_corpus<W: Write>(rows: &[CorpusRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CORPUS_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.user_id.to_string(),
            r.day.to_string(),
            r.slot.to_string(),
            u8::from(r.available).to_string(),
            fmt_f64(r.prior30_steps),
            fmt_f64(r.yesterday_steps),
            fmt_f64(r.temperature),
            fmt_f64(r.location),
            fmt_f64(r.step_variation),
            fmt_f64(r.engagement),
            u8::from(r.action).to_string(),
            fmt_f64(r.reward),
            fmt_f64(r.residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus<R: Read>(input: R) -> Result<Vec<CorpusRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CORPUS_COLUMNS {
        return Err(Error::Config(format!(
            "corpus header {header:?} does not match {CORPUS_COLUMNS:?}"
        )));
    }
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<CorpusRow>, _>>()?;
    for (i, r) in rows.iter().enumerate() {
        if !r.available && r.action {
            return Err(Error::Config(format!("row {}: action 1 at an unavailable time", i + 1)));
        }
    }
    Ok(rows)
}

/// Ground-truth reward coefficients in the `g`/`f` layouts, on the
/// generator's standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueCoefficients {
    pub alpha_avail: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha_unavail: Vec<f64>,
}

impl Default for TrueCoefficients {
    fn default() -> Self {
        // g: intercept, dosage, engagement, location, variation, prior30, yesterday, temperature
        // f: intercept, dosage, engagement, location, variation
        Self {
            alpha_avail: vec![3.0, -0.6, 0.0, 0.2, 0.3, 1.5, 0.5, 0.2],
            beta: vec![0.3, -0.4, 0.0, 0.1, 0.1],
            alpha_unavail: vec![2.8, -0.5, 0.0, 0.1, 0.2, 1.2, 0.4, 0.1],
        }
    }
}

/// Synthetic corpus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_participants: usize,
    pub n_days: usize,
    pub slots_per_day: usize,
    /// Dosage decay used to reconstruct the pilot's dosage from its actions.
    pub lambda: f64,
    pub availability_rate: f64,
    /// Micro-randomization probability at available times.
    pub randomization_prob: f64,
    /// AR(1) coefficient of the latent activity level across decision times.
    pub context_autocorrelation: f64,
    pub residual_sd: f64,
    /// Per-participant deviation (sd) added to every true coefficient.
    pub person_sd: f64,
    pub coefficients: TrueCoefficients,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_participants: 37,
            n_days: 42,
            slots_per_day: 5,
            lambda: 0.95,
            availability_rate: 0.8,
            randomization_prob: 0.6,
            context_autocorrelation: 0.5,
            residual_sd: 1.0,
            person_sd: 0.1,
            coefficients: TrueCoefficients::default(),
        }
    }
}

/// Fixed standardization of the generator's ground truth.
pub fn generator_scaler(lambda: f64) -> Scaler {
    let entries = [
        ("prior30_steps", 0.0, 2000.0),
        ("yesterday_steps", 0.0, 20000.0),
        ("temperature", -10.0, 35.0),
        ("location", 0.0, 1.0),
        ("step_variation", 0.0, 3.0),
        ("engagement", 0.0, 1.0),
        (DOSAGE, 0.0, 1.0 / (1.0 - lambda)),
    ];
    Scaler(
        entries
            .into_iter()
            .map(|(n, min, max)| (n.to_string(), Range { min, max }))
            .collect(),
    )
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let c = &self.coefficients;
        if c.alpha_avail.len() != 8 || c.alpha_unavail.len() != 8 || c.beta.len() != 5 {
            return Err(Error::Config(
                "coefficients need 8 baseline and 5 treatment-effect entries".into(),
            ));
        }
        if self.n_participants == 0 || self.n_days == 0 || self.slots_per_day == 0 {
            return Err(Error::Config("corpus dimensions must be positive".into()));
        }
        for (name, p) in [
            ("availability_rate", self.availability_rate),
            ("randomization_prob", self.randomization_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} not in [0,1]")));
            }
        }
        if !(self.context_autocorrelation.abs() < 1.0) || self.residual_sd < 0.0 || self.person_sd < 0.0 {
            return Err(Error::Config("invalid autocorrelation or noise scale".into()));
        }
        Ok(())
    }

    /// Generate the corpus. Deterministic in `seed`.
    pub fn generate(&self, seed: u64) -> Result<Vec<CorpusRow>> {
        self.validate()?;
        let scaler = generator_scaler(self.lambda);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut rows = Vec::with_capacity(self.n_participants * self.n_days * self.slots_per_day);
        for user in 0..self.n_participants {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::env::mix_seed(seed, &[user as u64]));
            let z = |rng: &mut ChaCha8Rng| std_normal.sample(rng);
            // structural zeros (the uncollected engagement feature) stay zero
            let perturb = |v: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
                v.iter()
                    .map(|c| if *c == 0.0 { 0.0 } else { c + self.person_sd * z(rng) })
                    .collect()
            };
            let alpha = perturb(&self.coefficients.alpha_avail, &mut rng);
            let beta = perturb(&self.coefficients.beta, &mut rng);
            let alpha_u = perturb(&self.coefficients.alpha_unavail, &mut rng);
            let activity_offset = 0.4 * z(&mut rng);
            let yesterday_mean = 6500.0 + 1500.0 * z(&mut rng);
            let climate = 12.0 + 6.0 * z(&mut rng);
            let variation_base = 1.2 + 0.3 * z(&mut rng);
            let home_prob = (0.5 + 0.15 * z(&mut rng)).clamp(0.1, 0.9);

            let rho = self.context_autocorrelation;
            let mut latent = z(&mut rng);
            let mut dosage = 0.0;
            let mut prev_action = false;
            for day in 1..=self.n_days {
                let yesterday = (yesterday_mean + 2000.0 * z(&mut rng)).clamp(0.0, 20000.0);
                let temperature = (climate + 4.0 * z(&mut rng)).clamp(-10.0, 35.0);
                for slot in 1..=self.slots_per_day {
                    if day > 1 || slot > 1 {
                        dosage = update_dosage(dosage, prev_action, self.lambda)?;
                    }
                    latent = rho * latent + (1.0 - rho * rho).sqrt() * z(&mut rng);
                    let raw = RawContext {
                        prior30_steps: (5.0 + activity_offset + latent).exp().clamp(0.0, 2000.0),
                        yesterday_steps: yesterday,
                        temperature,
                        location: f64::from(u8::from(rng.random_bool(home_prob))),
                        step_variation: (variation_base + 0.3 * z(&mut rng)).clamp(0.0, 3.0),
                        engagement: 0.0,
                    };
                    let available = rng.random_bool(self.availability_rate);
                    let action = available && rng.random_bool(self.randomization_prob);
                    let residual = self.residual_sd * z(&mut rng);
                    let fp = build_features(&raw, dosage, &scaler)?;
                    let dot = |x: &nalgebra::DVector<f64>, c: &[f64]| -> f64 {
                        x.iter().zip(c).map(|(a, b)| a * b).sum()
                    };
                    let mean = if available {
                        dot(&fp.g, &alpha) + if action { dot(&fp.f, &beta) } else { 0.0 }
                    } else {
                        dot(&fp.g, &alpha_u)
                    };
                    rows.push(CorpusRow {
                        user_id: user as u32 + 1,
                        day,
                        slot,
                        available,
                        prior30_steps: raw.prior30_steps,
                        yesterday_steps: raw.yesterday_steps,
                        temperature: raw.temperature,
                        location: raw.location,
                        step_variation: raw.step_variation,
                        engagement: raw.engagement,
                        action,
                        reward: mean + residual,
                        residual,
                    });
                    prev_action = action;
                }
            }
        }
        Ok(rows)
    }
}
