use oucv_core::designs::{minimal_log_gaps, tau_squared_from_log_gaps};
use oucv_core::{Design, Error};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_valid(d: &Design<f64>) {
    let pts = d.points();
    let n = pts.len();
    assert_eq!(pts[0], 0.0);
    assert_eq!(pts[n - 1], 1.0);
    assert!(d.gaps().iter().all(|&g| g > 0.0));
    let total: f64 = d.gaps().iter().sum();
    assert!((total - 1.0).abs() <= 1e-12, "gap sum {total}");
}

#[test]
fn regular_tau_is_exact_across_sizes() {
    for n in (5..=10_000).step_by(37).chain([5, 6, 7, 12, 200, 10_000]) {
        let d = Design::<f64>::regular(n).unwrap();
        assert_valid(&d);
        let target = 3.0 * (n as f64 - 3.0) / n as f64;
        let t = d.tau_squared().unwrap();
        assert!((t - target).abs() <= 1e-14 * target, "n={n}: {t} vs {target}");
    }
}

#[test]
fn maximal_tau_matches_closed_form_limit() {
    // 4γ² - 4γ + 4 up to o(1)
    let n = 1000;
    let gamma = 1.0 / n as f64;
    let t = Design::<f64>::maximal(n, gamma).unwrap().tau_squared().unwrap();
    assert!((t - (4.0 * gamma * gamma - 4.0 * gamma + 4.0)).abs() < 0.05, "{t}");
}

#[test]
fn maximal_closing_gap_for_even_n() {
    let d = Design::<f64>::maximal(12, 1.0 / 12.0).unwrap();
    assert!((d.gaps()[10] - 2.0 / 12.0).abs() < 1e-15);
    assert_valid(&d);
    let stressed = Design::<f64>::maximal(4, 0.999999).unwrap();
    assert_valid(&stressed);
}

#[test]
fn minimal_family() {
    let d = Design::<f64>::minimal(12, 0.5).unwrap();
    assert_valid(&d);
    // r = Σ_{i=4}^{12} 1/i! by direct summation
    let mut fact = 6.0f64;
    let mut r = 0.0;
    for i in 4..=12 {
        fact *= i as f64;
        r += 1.0 / fact;
    }
    assert!((d.gaps()[0] - (1.0 - r) / 2.0).abs() < 1e-15);
    assert!((d.gaps()[1] - (1.0 - r) / 2.0).abs() < 1e-15);
    // nine points past the head cluster near 1
    assert!(d.points()[3..].iter().all(|&s| s > 0.99));
    assert!(matches!(Design::<f64>::minimal(200, 0.5), Err(Error::Overflow(_))));
    assert!(Design::<f64>::minimal(6, 0.3).is_err());
    let big = Design::<f64>::minimal(170, 0.5).unwrap();
    assert!(big.gaps().iter().all(|&g| g > 0.0));
}

#[test]
fn log_gap_route_agrees_with_direct_minimal_tau() {
    for n in [12, 20, 60, 170] {
        let direct = Design::<f64>::minimal(n, 0.5).unwrap().tau_squared().unwrap();
        let via_logs = tau_squared_from_log_gaps(&minimal_log_gaps(n, 0.5).unwrap()).unwrap();
        assert!((direct - via_logs).abs() < 1e-12, "n={n}: {direct} vs {via_logs}");
    }
    let t = tau_squared_from_log_gaps(&minimal_log_gaps(100_000, 0.5).unwrap()).unwrap();
    assert!((t - 2.0).abs() < 0.05);
}

#[test]
fn from_points_errors_carry_the_index() {
    assert!(Design::from_points(vec![0.0, 0.3, 1.0]).is_ok());
    match Design::from_points(vec![0.0, 0.5, 0.5, 1.0]) {
        Err(Error::InvalidDesign { index, .. }) => assert_eq!(index, 3),
        other => panic!("{other:?}"),
    }
    assert!(matches!(Design::from_points(vec![0.1, 0.5, 1.0]), Err(Error::InvalidDesign { index: 1, .. })));
    assert!(matches!(Design::<f64>::regular(2), Err(Error::InvalidSize(_))));
    assert!(matches!(Design::<f64>::regular(4).unwrap().tau_squared(), Err(Error::InvalidSize(_))));
}

#[test]
fn random_dirichlet_designs_have_tau_in_slack_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let d = Design::<f64>::random(100_000, &mut rng).unwrap();
        let t = d.tau_squared().unwrap();
        assert!((1.9..=4.1).contains(&t), "{t}");
    }
}

#[test]
fn gap_profile_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [5, 6, 50, 3000] {
        let d = Design::<f64>::random(n, &mut rng).unwrap();
        let p = d.gap_profile().unwrap();
        assert!(p.q.iter().all(|&q| q > 0.0 && q < 2.0));
        assert!(p.cross.iter().all(|&c| c > 0.0 && c <= 0.25));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_designs_are_valid(n in 3usize..500, seed in any::<u64>()) {
        let d = Design::<f64>::random(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_valid(&d);
        prop_assert!(d.points().windows(2).all(|w| w[0] < w[1]));
        let again = Design::from_points(d.points().to_vec()).unwrap();
        prop_assert_eq!(again.points(), d.points());
    }

    /// Reversal maps the pair-term window i = 3..n-1 onto 2..n-2, so the two
    /// values differ by exactly one boundary pair on each side.
    #[test]
    fn reversal_changes_tau_by_one_boundary_pair(n in 6usize..400, seed in any::<u64>()) {
        let d = Design::<f64>::random(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let g = d.gaps();
        let pair = |a: f64, b: f64| a * b / ((a + b) * (a + b));
        let shift = 4.0 / n as f64 * (pair(g[0], g[1]) - pair(g[n - 3], g[n - 2]));
        let t = d.tau_squared().unwrap();
        let tr = d.reversed().tau_squared().unwrap();
        prop_assert!((tr - t - shift).abs() <= 1e-10);
        // and the q² part alone is exactly symmetric
        let q2 = |d: &Design<f64>| d.gap_profile().unwrap().q.iter().map(|q| q * q).sum::<f64>();
        prop_assert!((q2(&d) - q2(&d.reversed())).abs() <= 1e-10);
    }

    #[test]
    fn maximal_designs_are_valid(n in 4usize..2000, gamma in 0.001f64..0.999) {
        let d = Design::<f64>::maximal(n, gamma).unwrap();
        assert_valid(&d);
    }
}
