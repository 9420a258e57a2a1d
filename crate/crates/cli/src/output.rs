//! CSV layouts for trajectories and per-participant improvements.

use std::io::{Read, Write};

use anyhow::{bail, Result};

use dosage_ts::corpus::fmt_f64;
use dosage_ts::env::Trajectory;
use dosage_ts::experiment::ParticipantImprovement;

pub const TRAJECTORY_COLUMNS: [&str; 10] = [
    "t",
    "day",
    "slot",
    "available",
    "dosage",
    "pre_clip",
    "pi",
    "action",
    "reward",
    "beta_mean_dot_f",
];

pub const IMPROVEMENT_COLUMNS: [&str; 6] = [
    "user_id",
    "fold",
    "treatment_mean",
    "bandit_mean",
    "improvement_mean",
    "improvement_se",
];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// One row per decision time; selection columns are blank when unavailable.
pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_COLUMNS)?;
    for (i, s) in traj.steps.iter().enumerate() {
        let r = &s.record;
        w.write_record([
            (i + 1).to_string(),
            r.context.day.to_string(),
            r.context.slot.to_string(),
            u8::from(r.context.available).to_string(),
            fmt_f64(r.context.dosage),
            opt(s.pre_clip),
            fmt_f64(r.pi),
            u8::from(r.action).to_string(),
            fmt_f64(r.reward),
            opt(s.effect_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Number of data rows, after checking the header and that every row has
/// the full set of fields.
pub fn count_rows<R: Read>(input: R, columns: &[&str]) -> Result<usize> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(columns.iter().copied()) {
        bail!("unexpected header {:?}", rdr.headers()?);
    }
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != columns.len() {
            bail!("row {} has {} fields", n + 1, rec.len());
        }
        n += 1;
    }
    Ok(n)
}

pub fn write_improvements<W: Write>(rows: &[ParticipantImprovement], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(IMPROVEMENT_COLUMNS)?;
    for p in rows {
        w.write_record([
            p.user_id.to_string(),
            p.fold.to_string(),
            fmt_f64(p.treatment_mean),
            fmt_f64(p.bandit_mean),
            fmt_f64(p.improvement_mean),
            fmt_f64(p.improvement_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_improvements<R: Read>(input: R) -> Result<Vec<ParticipantImprovement>> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(IMPROVEMENT_COLUMNS) {
        bail!("unexpected header {:?}", rdr.headers()?);
    }
    Ok(rdr.deserialize().collect::<Result<Vec<_>, _>>()?)
}
