mod common;

use common::*;
use dosage_ts::calibration::{
    build_envs, build_prior, group_participants, initial_h, person_fits, pooled_fit, sample_sd, BatchFit,
    Calibration, PersonFits, PooledFit, RewardModel, SIGNIFICANCE_LEVEL,
};
use dosage_ts::env::EnvCoefficients;
use dosage_ts::experiment::{cross_validate, grid_search, CvOptions, LearnerFactory, TreatmentArm};
use dosage_ts::proxy::ProxyTables;
use dosage_ts::regression::OlsFit;
use dosage_ts::{AlgoConfig, Algorithm, Error};

fn toy_fit(model: RewardModel, coef: Vec<f64>, p_values: Vec<f64>) -> PooledFit {
    let k = coef.len();
    PooledFit {
        model,
        fit: OlsFit {
            names: model.column_names(),
            coef,
            robust_se: vec![0.1; k],
            p_values,
            residual_variance: 1.0,
            n_obs: 100,
            n_clusters: 3,
            residuals: Vec::new(),
        },
    }
}

fn toy_persons(model: RewardModel, coefs: &[Vec<f64>]) -> PersonFits {
    PersonFits {
        model,
        fits: coefs
            .iter()
            .enumerate()
            .map(|(u, c)| (u as u32, toy_fit(model, c.clone(), vec![0.5; c.len()]).fit))
            .collect(),
        skipped: Vec::new(),
    }
}

#[test]
fn dosage_is_rebuilt_from_logged_actions() {
    let cfg = AlgoConfig::default();
    let mut rows = small_corpus(2, 1);
    rows.reverse();
    let data = group_participants(&rows, &cfg).unwrap();
    assert_eq!(data.len(), 2);
    for p in &data {
        assert_eq!(p.rows.len(), 210);
        assert_eq!(p.dosage[0], 0.0);
        for t in 1..p.rows.len() {
            assert_eq!((p.rows[t].day - 1) * 5 + p.rows[t].slot, t + 1);
            let expected = 0.95 * p.dosage[t - 1] + f64::from(u8::from(p.rows[t - 1].action));
            assert_eq!(p.dosage[t], expected);
        }
    }
    let mut gap = small_corpus(2, 1);
    gap.remove(17);
    assert!(matches!(group_participants(&gap, &cfg), Err(Error::InsufficientData(_))));
}

#[test]
fn prior_follows_significance_rules() {
    let model = RewardModel::Unavailable;
    // 7 fitted g columns: intercept, dosage, location, variation, prior30, yesterday, temperature
    let pooled = toy_fit(
        model,
        vec![3.0, -0.5, 0.2, 0.1, 1.0, 0.4, 0.05],
        vec![0.001, 0.01, 0.2, 0.5, 0.0, 0.049, 0.051],
    );
    let persons = toy_persons(
        model,
        &[
            vec![2.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            vec![4.0, 0.0, 0.4, 0.3, 2.0, 1.0, 0.2],
            vec![3.0, -0.5, 0.2, 0.6, 3.0, 0.5, 0.4],
        ],
    );
    let prior = build_prior(&pooled, &persons, SIGNIFICANCE_LEVEL).unwrap();
    let sd = |j: usize| {
        let v: Vec<f64> = persons.coefficients().iter().map(|c| c[j]).collect();
        // sample sd, written out
        let m = v.iter().sum::<f64>() / 3.0;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 2.0).sqrt()
    };
    // g layout: intercept, dosage, engagement, location, variation, prior30, yesterday, temperature
    let layout = [0, 1, 3, 4, 5, 6, 7];
    let significant = [true, true, false, false, true, true, false];
    for (k, &j) in layout.iter().enumerate() {
        if significant[k] {
            assert_eq!(prior.g_mean[j], pooled.fit.coef[k]);
            assert!((prior.g_sd[j] - sd(k)).abs() < 1e-12);
        } else {
            assert_eq!(prior.g_mean[j], 0.0);
            assert!((prior.g_sd[j] - sd(k) / 2.0).abs() < 1e-12);
        }
    }
    let others: f64 = layout.iter().map(|&j| prior.g_sd[j]).sum::<f64>() / 7.0;
    assert_eq!(prior.g_mean[2], 0.0);
    assert!((prior.g_sd[2] - others).abs() < 1e-12);
    assert!(prior.f_mean.is_empty());

    let one = toy_persons(model, &[vec![0.0; 7]]);
    assert!(matches!(build_prior(&pooled, &one, 0.05), Err(Error::InsufficientData(_))));
}

#[test]
fn all_significant_prior_means_equal_pooled_estimates() {
    let model = RewardModel::Available;
    let coef: Vec<f64> = (0..11).map(|j| j as f64 * 0.1 - 0.3).collect();
    let pooled = toy_fit(model, coef.clone(), vec![1e-6; 11]);
    let persons = toy_persons(model, &[vec![0.0; 11], vec![1.0; 11]]);
    let prior = build_prior(&pooled, &persons, 0.05).unwrap();
    let (g, f) = (&prior.g_mean, &prior.f_mean);
    let fitted: Vec<f64> = [0, 1, 3, 4, 5, 6, 7]
        .iter()
        .map(|&j| g[j])
        .chain([0, 1, 3, 4].iter().map(|&j| f[j]))
        .collect();
    assert_eq!(fitted, coef);
    assert_eq!(g[2], 0.0);
    assert_eq!(f[2], 0.0);
    assert!((prior.f_sd[2] - 1.0f64.sqrt() / 2.0f64.sqrt()).abs() < 1e-12);
}

#[test]
fn person_fit_equals_pooled_fit_on_duplicated_participant() {
    let cfg = AlgoConfig::default();
    let data = group_participants(&small_corpus(3, 4), &cfg).unwrap();
    let batch = BatchFit::fit(&data, &cfg).unwrap();
    let mut twin = data[0].clone();
    twin.user_id = 999;
    for r in &mut twin.rows {
        r.user_id = 999;
    }
    for model in [RewardModel::Available, RewardModel::Unavailable] {
        let pooled = pooled_fit(&[data[0].clone(), twin.clone()], &batch.scaler, model).unwrap();
        let person = person_fits(&data[..1], &batch.scaler, model).unwrap();
        for (a, b) in pooled.fit.coef.iter().zip(&person.fits[0].1.coef) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    assert!(matches!(
        pooled_fit(&data[..1], &batch.scaler, RewardModel::Available),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn rank_deficient_participant_is_skipped() {
    let cfg = AlgoConfig::default();
    let mut data = group_participants(&small_corpus(4, 6), &cfg).unwrap();
    for r in &mut data[2].rows {
        r.location = 1.0;
    }
    let batch = BatchFit::fit(&data, &cfg).unwrap();
    let fits = person_fits(&data, &batch.scaler, RewardModel::Available).unwrap();
    assert_eq!(fits.skipped, vec![data[2].user_id]);
    assert_eq!(fits.fits.len(), 3);

    let sd = sample_sd(&fits.coefficients().iter().map(|c| c[0]).collect::<Vec<_>>());
    let v: Vec<f64> = fits.fits.iter().map(|(_, f)| f.coef[0]).collect();
    let m = (v[0] + v[1] + v[2]) / 3.0;
    let direct = (((v[0] - m).powi(2) + (v[1] - m).powi(2) + (v[2] - m).powi(2)) / 2.0).sqrt();
    assert!((sd - direct).abs() < 1e-12);

    // residuals of the skipped participant fall back to the pooled fit
    let res = batch.person_residuals(&data).unwrap();
    assert!(res.iter().flatten().all(|e| e.is_finite()));
}

#[test]
fn pooled_design_reports_collinear_columns() {
    let cfg = AlgoConfig::default();
    let mut data = group_participants(&small_corpus(3, 2), &cfg).unwrap();
    for p in &mut data {
        for r in &mut p.rows {
            r.step_variation = 2.0;
        }
    }
    let batch_scaler = dosage_ts::Scaler::fit(
        &data.iter().flat_map(|p| p.rows.iter().map(|r| r.raw())).collect::<Vec<_>>(),
        0.95,
    )
    .unwrap();
    match pooled_fit(&data, &batch_scaler, RewardModel::Available) {
        Err(Error::RankDeficient(cols)) => {
            assert!(cols.contains(&"g.step_variation".to_string()), "{cols:?}");
        }
        other => panic!("expected rank deficiency, got {other:?}"),
    }
}

#[test]
fn initial_table_degenerates_without_delayed_effects() {
    let cfg = AlgoConfig::default();
    let data = group_participants(&small_corpus(3, 8), &cfg).unwrap();
    let batch = BatchFit::fit(&data, &cfg).unwrap();
    let mut coef: EnvCoefficients = batch.coefficients();
    let h = initial_h(&data, &batch.scaler, &coef, &cfg, 0.0).unwrap();
    let eta = ProxyTables::initial(&h, 0.0).unwrap().eta;
    assert!(eta.iter().all(|&e| e == 0.0));

    coef.alpha_avail[1] = 0.0;
    coef.beta[1] = 0.0;
    coef.alpha_unavail[1] = 0.0;
    let h = initial_h(&data, &batch.scaler, &coef, &cfg, 0.9).unwrap();
    let eta = ProxyTables::initial(&h, 0.9).unwrap().eta;
    assert!(eta.iter().all(|&e| e.abs() < 1e-12), "{:?}", &eta[..3]);
}

#[test]
fn calibration_is_deterministic_and_round_trips() {
    let cfg = AlgoConfig::default();
    let data = group_participants(&small_corpus(5, 12), &cfg).unwrap();
    let a = Calibration::fit(&data, &cfg, &[0.5]).unwrap();
    let b = Calibration::fit(&data, &cfg, &[0.5]).unwrap();
    let ja = serde_json::to_string(&a).unwrap();
    assert_eq!(ja, serde_json::to_string(&b).unwrap());
    assert!(a.sigma2 > 0.0);
    assert_eq!(a.initial_h.len(), 2);
    assert!(a.h1(0.5).is_ok() && a.h1(cfg.gamma).is_ok() && a.h1(0.25).is_err());
    let back: Calibration = serde_json::from_str(&ja).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), ja);
}

fn small_setup(days: usize) -> (AlgoConfig, Calibration, Vec<dosage_ts::env::ParticipantEnv>) {
    let cfg = AlgoConfig {
        n_days: days,
        ..AlgoConfig::default()
    };
    let data = group_participants(&small_corpus(3, 31), &cfg).unwrap();
    let batch = BatchFit::fit(&data, &cfg).unwrap();
    let cal = Calibration::from_batch(&batch, &data, &cfg, &[0.0, 0.5, 0.9]).unwrap();
    let envs = build_envs(&data, &batch, &cfg, 1).unwrap();
    (cfg, cal, envs)
}

#[test]
fn grid_search_shape_ties_and_determinism() {
    let (_, cal, envs) = small_setup(14);
    let factory = LearnerFactory::new(&cal).unwrap();
    let single = grid_search(&factory, &envs, &[0.5], &[0.25], 2, 9).unwrap();
    assert_eq!((single.best_gamma, single.best_w), (0.5, 0.25));

    let gammas = [0.0, 0.5, 0.9];
    let ws = [0.0, 0.5];
    let a = grid_search(&factory, &envs, &gammas, &ws, 2, 9).unwrap();
    let b = grid_search(&factory, &envs, &gammas, &ws, 2, 9).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.mean_reward.len(), 3);
    assert!(a.mean_reward.iter().all(|r| r.len() == 2));
    // with γ = 0 the proxy is identically zero, so w cannot matter and the
    // tie goes to the larger w
    assert_eq!(a.mean_reward[0][0], a.mean_reward[0][1]);
    let best = a
        .mean_reward
        .iter()
        .flatten()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let (i, j) = (
        gammas.iter().position(|&g| g == a.best_gamma).unwrap(),
        ws.iter().position(|&w| w == a.best_w).unwrap(),
    );
    assert_eq!(a.mean_reward[i][j], best);

    let zero_only = grid_search(&factory, &envs, &[0.0], &[0.0, 0.1], 1, 3).unwrap();
    assert_eq!(zero_only.best_w, 0.1);
    assert!(grid_search(&factory, &[], &gammas, &ws, 1, 1).is_err());
}

#[test]
fn null_comparison_gives_zero_improvement() {
    let cfg = AlgoConfig {
        n_days: 20,
        ..AlgoConfig::default()
    };
    let rows = small_corpus(9, 3);
    let opts = CvOptions {
        reps: 2,
        treatment: TreatmentArm::Fixed {
            algorithm: Algorithm::Bandit,
        },
        keep_trajectories: true,
        ..CvOptions::default()
    };
    let report = cross_validate(&rows, &cfg, &opts, 5).unwrap();
    assert_eq!(report.improvements.len(), 9);
    let mut seen: Vec<u32> = report.folds.iter().flat_map(|f| f.test_users.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (1..=9).collect::<Vec<u32>>());
    assert!(report.improvements.iter().all(|i| i.improvement_mean == 0.0 && i.improvement_se == 0.0));
    assert_eq!(report.summary.mean_improvement, 0.0);
    assert_eq!(report.summary.p_value, 1.0);
    assert_eq!(report.trajectories.len(), 9);
    assert!(report.folds.iter().all(|f| f.tuning.is_none()));
}

#[test]
fn cross_validation_with_fixed_proposed_arm() {
    let cfg = AlgoConfig {
        n_days: 20,
        ..AlgoConfig::default()
    };
    let rows = small_corpus(6, 13);
    let opts = CvOptions {
        reps: 2,
        treatment: TreatmentArm::Fixed {
            algorithm: Algorithm::Proposed { gamma: 0.9, w: 0.5 },
        },
        ..CvOptions::default()
    };
    let a = cross_validate(&rows, &cfg, &opts, 8).unwrap();
    let b = cross_validate(&rows, &cfg, &opts, 8).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    for i in &a.improvements {
        assert!((i.treatment_mean - i.bandit_mean - i.improvement_mean).abs() < 1e-9);
    }
    assert!(a.trajectories.is_empty());
    let too_many = CvOptions { folds: 7, ..opts };
    assert!(cross_validate(&rows, &cfg, &too_many, 8).is_err());
}
