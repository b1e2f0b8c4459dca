use oucv_core::linalg::Matrix;
use oucv_core::oracle::{dense_loo, dense_ml_neg2loglik, dense_oracle_score};
use oucv_core::scoring::{
    log_score, loo_predictions, ml_decomposition, ml_gradient_theta, ml_neg2loglik, precision_matrix,
    score_decomposition, score_gradient_theta,
};
use oucv_core::simulate::{covariance_matrix, sample_path};
use oucv_core::{CovarianceParams, Design};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn case(n: usize, seed: u64) -> (Design<f64>, Vec<f64>) {
    let d = Design::random(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let y = sample_path(&d, &CovarianceParams::new(3.0, 1.0).unwrap(), seed ^ 0xabc);
    (d, y)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn tridiagonal_score_matches_dense_oracle(
        n in 3usize..150,
        seed in any::<u64>(),
        theta in 0.1f64..10.0,
        sigma2 in 0.3f64..30.0,
    ) {
        let (d, y) = case(n, seed);
        let fast = log_score(&d, &y, theta, sigma2).unwrap();
        let dense = dense_oracle_score(&d, &y, theta, sigma2).unwrap();
        prop_assert!(rel(fast, dense) <= 1e-8, "{} vs {}", fast, dense);
        let ml = ml_neg2loglik(&d, &y, theta, sigma2).unwrap();
        let ml_dense = dense_ml_neg2loglik(&d, &y, theta, sigma2).unwrap();
        prop_assert!(rel(ml, ml_dense) <= 1e-8);
    }

    #[test]
    fn scaling_data_shifts_the_score(n in 3usize..80, seed in any::<u64>(), c in 0.1f64..10.0) {
        // S(θ, c²σ²; c y) = S(θ, σ²; y) + 2n log c
        let (d, y) = case(n, seed);
        let cy: Vec<f64> = y.iter().map(|v| c * v).collect();
        let a = log_score(&d, &cy, 2.0, c * c * 1.5).unwrap();
        let b = log_score(&d, &y, 2.0, 1.5).unwrap() + 2.0 * n as f64 * c.ln();
        prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
}

#[test]
fn decomposition_reproduces_score() {
    let (d, y) = case(120, 3);
    for theta in [0.1, 3.0, 10.0] {
        let dec = score_decomposition(&d, &y, theta).unwrap();
        assert!(dec.q > 0.0);
        for s2 in [0.3, 1.0, 30.0] {
            let direct = log_score(&d, &y, theta, s2).unwrap();
            assert!(rel(dec.value(s2), direct) <= 1e-10);
        }
        let star = dec.sigma2_star();
        assert!(dec.sigma2_derivative(star).abs() < 1e-10 * dec.n as f64 / star);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..30u64 {
        let n = rand::Rng::random_range(&mut rng, 3..=100);
        let (d, y) = case(n, 100 + k);
        let theta = rand::Rng::random_range(&mut rng, 0.2..8.0);
        let s2 = rand::Rng::random_range(&mut rng, 0.5..5.0);
        let h = 1e-5 * theta;
        let fd = (log_score(&d, &y, theta + h, s2).unwrap() - log_score(&d, &y, theta - h, s2).unwrap()) / (2.0 * h);
        let g = score_gradient_theta(&d, &y, theta, s2).unwrap();
        assert!((g - fd).abs() <= 1e-5 * fd.abs().max(1.0), "cv n={n}: {g} vs {fd}");
        let fd = (ml_neg2loglik(&d, &y, theta + h, s2).unwrap() - ml_neg2loglik(&d, &y, theta - h, s2).unwrap())
            / (2.0 * h);
        let g = ml_gradient_theta(&d, &y, theta, s2).unwrap();
        assert!((g - fd).abs() <= 1e-5 * fd.abs().max(1.0), "ml n={n}: {g} vs {fd}");
    }
}

#[test]
fn boundary_predictions_follow_the_markov_neighbour() {
    let (d, y) = case(40, 8);
    let theta = 1.7;
    let loo = loo_predictions(&d, &y, theta).unwrap();
    let g = d.gaps();
    let n = y.len();
    let r0 = (-theta * g[0]).exp();
    let rn = (-theta * g[n - 2]).exp();
    assert!((loo.predictions[0] - r0 * y[1]).abs() < 1e-13);
    assert!((loo.normalized_variances[0] - (1.0 - r0 * r0)).abs() < 1e-13);
    assert!((loo.predictions[n - 1] - rn * y[n - 2]).abs() < 1e-13);
    assert!((loo.normalized_variances[n - 1] - (1.0 - rn * rn)).abs() < 1e-13);
    let dense = dense_loo(&d, &y, theta).unwrap();
    for i in 0..n {
        assert!((loo.predictions[i] - dense.predictions[i]).abs() < 1e-10);
        assert!(rel(loo.normalized_variances[i], dense.normalized_variances[i]) < 1e-10);
    }
}

#[test]
fn precision_inverts_covariance() {
    for (n, seed) in [(3, 1), (17, 2), (300, 3)] {
        let (d, _) = case(n, seed);
        let p = precision_matrix(&d, 2.5).to_dense();
        let r = covariance_matrix(&d, 2.5);
        assert!(p.matmul(&r).max_abs_diff(&Matrix::identity(n)) < 1e-8, "n={n}");
    }
}

#[test]
fn reversing_design_and_data_leaves_scores_unchanged() {
    let (d, y) = case(90, 14);
    let rd = d.reversed();
    let ry: Vec<f64> = y.iter().rev().copied().collect();
    for theta in [0.3, 3.0, 9.0] {
        let a = log_score(&d, &y, theta, 1.2).unwrap();
        let b = log_score(&rd, &ry, theta, 1.2).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        let a = ml_neg2loglik(&d, &y, theta, 1.2).unwrap();
        let b = ml_neg2loglik(&rd, &ry, theta, 1.2).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn ml_decomposition_of_zero_data() {
    let d = Design::<f64>::regular(25).unwrap();
    let dec = ml_decomposition(&d, &[0.0; 25], 3.0).unwrap();
    assert_eq!(dec.q, 0.0);
    // n log 2π plus the log det of the unit-variance covariance, Σ log(1 - ρ_i²)
    let logdet: f64 = d.gaps().iter().map(|g| (-(-6.0 * g).exp_m1()).ln()).sum();
    let expect = 25.0 * std::f64::consts::TAU.ln() + logdet;
    assert!((dec.l - expect).abs() < 1e-12);
}

#[test]
fn tiny_gaps_stay_finite() {
    let d = Design::<f64>::minimal(170, 0.5).unwrap();
    let y = sample_path(&d, &CovarianceParams::new(3.0, 1.0).unwrap(), 4);
    for theta in [0.1, 3.0, 10.0] {
        assert!(log_score(&d, &y, theta, 1.0).unwrap().is_finite());
        assert!(score_gradient_theta(&d, &y, theta, 1.0).unwrap().is_finite());
        assert!(ml_gradient_theta(&d, &y, theta, 1.0).unwrap().is_finite());
    }
}

#[test]
fn rejects_bad_inputs() {
    let d = Design::<f64>::regular(10).unwrap();
    let y = vec![0.5; 10];
    assert!(log_score(&d, &y[..9], 1.0, 1.0).is_err());
    assert!(log_score(&d, &y, 0.0, 1.0).is_err());
    assert!(log_score(&d, &y, 1.0, -1.0).is_err());
    let mut bad = y.clone();
    bad[3] = f64::NAN;
    assert!(log_score(&d, &bad, 1.0, 1.0).is_err());
}

#[test]
fn single_precision_tracks_double() {
    let d64 = Design::<f64>::regular(60).unwrap();
    let y64 = sample_path(&d64, &CovarianceParams::new(3.0, 1.0).unwrap(), 2);
    let d32 = Design::<f32>::regular(60).unwrap();
    let y32: Vec<f32> = y64.iter().map(|&v| v as f32).collect();
    let a = log_score(&d64, &y64, 3.0, 1.0).unwrap();
    let b = log_score(&d32, &y32, 3.0, 1.0).unwrap() as f64;
    assert!(rel(b, a) < 1e-3, "{a} vs {b}");
}
