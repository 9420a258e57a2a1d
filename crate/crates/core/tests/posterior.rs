mod common;

use common::*;
use dosage_ts::belief::ConjugateRegression;
use dosage_ts::calibration::{build_envs, group_participants, BatchFit, Calibration};
use dosage_ts::env::run_episode;
use dosage_ts::features::FeaturePair;
use dosage_ts::posterior::{extract_beta, joint_feature, posterior_joint};
use dosage_ts::proxy::DosageKernel;
use dosage_ts::{AlgoConfig, GaussianBelief, Learner, ProposedLearner};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn posterior_matches_normal_equations_with_explicit_features() {
    let scaler = scaler();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let len = rng.random_range(0..=50);
        let history = random_history(&mut rng, len);
        let prior = random_prior(&mut rng);
        let sigma2 = rng.random_range(0.3..3.0);
        let got = posterior_joint(&history, &scaler, &prior, sigma2).unwrap();

        let prior_joint = prior.to_belief();
        let prior_prec = prior_joint.cov.clone().try_inverse().unwrap();
        let mut a = prior_prec.clone();
        let mut b = &prior_prec * &prior_joint.mean;
        for rec in history.iter().filter(|r| r.context.available) {
            let (f, g) = oracle_features(&rec.context.raw, rec.context.dosage, &scaler);
            let a_c = f64::from(u8::from(rec.action)) - rec.pi;
            let phi: Vec<f64> = g
                .iter()
                .copied()
                .chain(f.iter().map(|v| v * rec.pi))
                .chain(f.iter().map(|v| v * a_c))
                .collect();
            let phi = DVector::from_vec(phi);
            a += &phi * phi.transpose() / sigma2;
            b += &phi * (rec.reward / sigma2);
        }
        let cov = a.try_inverse().unwrap();
        let mean = &cov * b;
        assert!((&got.mean - mean).amax() < 1e-8);
        assert!(max_abs(&got.cov, &cov) < 1e-8);
    }
}

#[test]
fn unavailable_records_do_not_move_the_posterior() {
    let scaler = scaler();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let history = random_history(&mut rng, 40);
    let prior = random_prior(&mut rng);
    let all = posterior_joint(&history, &scaler, &prior, 1.0).unwrap();
    let avail: Vec<_> = history.iter().copied().filter(|r| r.context.available).collect();
    let only = posterior_joint(&avail, &scaler, &prior, 1.0).unwrap();
    assert_eq!(all, only);
}

/// Baseline misspecified and correlated with the randomization probability:
/// the centered coefficient still recovers the effect, a non-centered
/// regression does not.
#[test]
fn action_centering_is_robust_to_baseline_misspecification() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let beta = 0.5;
    let flat = GaussianBelief::diagonal(&[0.0; 3], &[100.0; 3]).unwrap();
    let mut centered = ConjugateRegression::new(flat.clone(), 1.0).unwrap();
    let flat2 = GaussianBelief::diagonal(&[0.0; 2], &[100.0; 2]).unwrap();
    let mut naive = ConjugateRegression::new(flat2, 1.0).unwrap();
    for _ in 0..40_000 {
        let z: f64 = rng.random();
        let pi = 0.2 + 0.6 * z;
        let a = rng.random_bool(pi);
        let noise: f64 = rng.random_range(-1.0..1.0);
        let reward = 2.0 + 3.0 * z * z + if a { beta } else { 0.0 } + noise;
        let pair = FeaturePair {
            f: DVector::from_element(1, 1.0),
            g: DVector::from_element(1, 1.0),
        };
        centered.observe(&joint_feature(&pair, pi, a), reward).unwrap();
        naive
            .observe(&DVector::from_vec(vec![1.0, f64::from(u8::from(a))]), reward)
            .unwrap();
    }
    let est = extract_beta(&centered.posterior().unwrap(), 1).unwrap().mean[0];
    let biased = naive.posterior().unwrap().mean[1];
    assert!((est - beta).abs() < 0.05, "centered estimate {est}");
    // E[z² | A=1] − E[z² | A=0] = 0.2, times 3
    assert!((biased - beta - 0.6).abs() < 0.06, "naive estimate {biased}");
}

#[test]
fn nightly_updates_equal_batch_posterior() {
    let cfg = AlgoConfig {
        n_days: 12,
        ..AlgoConfig::default()
    };
    let rows = small_corpus(6, 5);
    let data = group_participants(&rows, &cfg).unwrap();
    let batch = BatchFit::fit(&data, &cfg).unwrap();
    let cal = Calibration::from_batch(&batch, &data, &cfg, &[]).unwrap();
    let envs = build_envs(&data, &batch, &cfg, 8).unwrap();
    let prior = cal.prior.joint().unwrap();
    let mut learner = ProposedLearner::new(
        cal.config.clone(),
        cal.scaler.clone(),
        &prior,
        &cal.prior_unavail.baseline().unwrap(),
        cal.h1(cfg.gamma).unwrap().clone(),
        DosageKernel::for_config(&cfg).unwrap(),
    )
    .unwrap();
    let traj = run_episode(&envs[0], &mut learner, &cal.config, 17).unwrap();
    let batch_post = posterior_joint(&traj.records(), &cal.scaler, &prior, cal.sigma2).unwrap();
    let online = learner.joint_posterior().unwrap();
    assert!((&online.mean - &batch_post.mean).amax() < 1e-9);
    assert!(max_abs(&online.cov, &batch_post.cov) < 1e-9);
    let beta = extract_beta(&batch_post, 5).unwrap();
    assert!((&learner.beta().mean - &beta.mean).amax() < 1e-9);

    // a second nightly call with nothing new is a no-op
    let before = learner.beta().clone();
    learner.nightly(&traj.records()).unwrap();
    assert_eq!(learner.beta(), &before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posterior_is_order_invariant(seed in any::<u64>(), len in 0usize..40) {
        let scaler = scaler();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut history = random_history(&mut rng, len);
        let prior = random_prior(&mut rng);
        let a = posterior_joint(&history, &scaler, &prior, 1.3).unwrap();
        history.shuffle(&mut rng);
        let b = posterior_joint(&history, &scaler, &prior, 1.3).unwrap();
        prop_assert!((&a.mean - &b.mean).amax() < 1e-9);
        prop_assert!(max_abs(&a.cov, &b.cov) < 1e-9);
    }

    #[test]
    fn posterior_covariance_shrinks(seed in any::<u64>(), len in 1usize..40) {
        let scaler = scaler();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history = random_history(&mut rng, len);
        let prior = random_prior(&mut rng);
        let post = posterior_joint(&history, &scaler, &prior, 1.0).unwrap();
        let prior = prior.to_belief();
        for i in 0..post.dim() {
            prop_assert!(post.cov[(i, i)] <= prior.cov[(i, i)] + 1e-12);
        }
        let sym = max_abs(&post.cov, &post.cov.transpose());
        prop_assert!(sym < 1e-10);
    }
}
