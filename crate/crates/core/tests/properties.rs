//! Randomized invariants across modules.

use proptest::prelude::*;

use fwkit::fields::{build_field, check_decomposition, sample_domain, FieldSpec, Fourier};
use fwkit::mpp::mpp_shoot_1d;
use fwkit::oracle::{ou_params, OuState};
use fwkit::ratefn::{cgf, legendre, theta_grid, Source};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ou_parameters_compose(
        b in 0.2f64..3.0,
        mu in -4.0f64..4.0,
        s2 in 0.1f64..5.0,
        t1 in 0.0f64..2.0,
        t2 in 0.0f64..2.0,
    ) {
        let s0 = OuState::new(b, mu, s2, 0.0).unwrap();
        let once = ou_params(&s0, t1 + t2).unwrap();
        let twice = ou_params(&ou_params(&s0, t1).unwrap(), t2).unwrap();
        prop_assert!((once.mu - twice.mu).abs() <= 1e-12 * (1.0 + mu.abs()));
        prop_assert!((once.sigma2 - twice.sigma2).abs() <= 1e-12 * (1.0 + s2));
    }

    #[test]
    fn analytic_jacobian_matches_differences(
        coeffs in prop::collection::vec(-1.0f64..1.0, 1..5),
        x in -1.5f64..1.5,
    ) {
        let f = build_field(&FieldSpec::Poly1d { coeffs }).unwrap();
        let exact = f.jacobian(&[x])[0][0];
        let fd = f.jacobian_fd(&[x])[0][0];
        prop_assert!((exact - fd).abs() <= 1e-6 * (1.0 + exact.abs()));
    }

    #[test]
    fn fourier_antiderivative_inverts_derivative(
        cos in prop::collection::vec(-1.0f64..1.0, 0..4),
        sin in prop::collection::vec(-1.0f64..1.0, 0..4),
        theta in 0.0f64..1.0,
    ) {
        let g = Fourier::new(0.0, cos, sin);
        let back = g.antiderivative().derivative(theta, 1);
        prop_assert!((back - g.value(theta)).abs() <= 1e-12);
    }

    #[test]
    fn decomposition_holds_for_any_gamma(gamma in -3.0f64..3.0, c in 0.1f64..2.0) {
        let f = build_field(&FieldSpec::Decomposed2d {
            potential: vec![vec![0.0, 0.0, 0.5 * c], vec![0.0, 0.1], vec![c]],
            gamma,
        })
        .unwrap();
        let report = check_decomposition(&f, &sample_domain(&f, 2.0, 9), 1e-10).unwrap();
        prop_assert!(report.passed, "{report:?}");
    }

    #[test]
    fn gaussian_legendre_is_quadratic(mean in -0.5f64..0.5, var in 0.3f64..2.0, x in -1.0f64..1.0) {
        let table = cgf(&Source::Gaussian { mean, variance: var }, &theta_grid(4.0, 801).unwrap()).unwrap();
        let u = legendre(&table, x);
        prop_assert!(!u.unreliable);
        prop_assert!((u.value - (x - mean).powi(2) / (2.0 * var)).abs() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shooting_energy_decreases_with_travel_time(
        b in 0.5f64..2.0,
        q1 in -1.0f64..0.0,
        q2 in 0.2f64..1.0,
        t in 0.2f64..1.0,
    ) {
        let f = build_field(&FieldSpec::Ou { b_coef: b }).unwrap();
        let short = mpp_shoot_1d(&f, q1, q2, t);
        let long = mpp_shoot_1d(&f, q1, q2, 1.5 * t);
        if let (Ok(s), Ok(l)) = (short, long) {
            prop_assert!(l.energy < s.energy);
        }
    }
}
