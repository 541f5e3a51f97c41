use std::f64::consts::PI;

use lds_core::acq::{default_grid, is_acquiescent, spectral_radius_ok, AcqPolytope, Cone, PROJECTION_TOL};
use lds_core::gen::{
    random_acquiescent, random_roots_poly, sample_trajectory, stream_rng, H0Policy, InputDist, Strategy,
};
use lds_core::learn::{sgd_train, ProjectionSpec, SgdConfig};
use lds_core::lds::{companion, to_transfer, transfer_eval, SystemParams};
use lds_core::poly::char_poly;
use lds_core::risk::{idealized_risk_time, population_risk_closed, wqc_margin};
use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn member(seed: u64, n: usize, alpha: f64, width: usize) -> SystemParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_acquiescent(n, alpha, &Cone::default(), Strategy::L1Ball, width, width, &mut rng).unwrap().params
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn companion_spectrum_matches_roots(a in prop::collection::vec(-0.6f64..0.6, 1..8)) {
        let eig = companion(&a).complex_eigenvalues();
        let rho_eig = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let rho_roots = char_poly(&a).unwrap().roots().unwrap().max_modulus();
        prop_assert!((rho_eig - rho_roots).abs() <= 1e-8, "{rho_eig} vs {rho_roots}");
    }

    #[test]
    fn members_do_not_blow_up(seed in any::<u64>(), n in 1usize..7, unit in any::<bool>()) {
        let alpha = if unit { 1.0 } else { 0.9 };
        let a = member(seed, n, alpha, 1).a;
        let a_mat = companion(&a);
        let mut v = DVector::<f64>::zeros(n);
        v[n - 1] = 1.0;
        let mut total = 0.0;
        for _ in 0..=2000 {
            total += v.norm_squared();
            v = &a_mat * v;
        }
        let tau1 = Cone::default().tau1;
        prop_assert!(total <= 2.0 * PI * n as f64 / (tau1 * tau1), "{}", total);
    }

    #[test]
    fn transfer_times_denominator_is_numerator(seed in any::<u64>(), n in 1usize..6, width in 1usize..3) {
        let sys = member(seed, n, 0.9, width);
        let tf = to_transfer(&sys);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..32 {
            let z = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
            let g = transfer_eval(&sys, z).unwrap();
            let p = tf.denominator.eval(z);
            for (gi, s) in g.iter().zip(&tf.numerators) {
                prop_assert!((gi * p - s.eval(z)).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn excess_risk_grows_with_length_and_stays_below_idealized(
        seed in any::<u64>(), n in 1usize..5, sigma in 0.0f64..1.0,
    ) {
        let truth = member(seed, n, 0.9, 1);
        let est = member(seed.wrapping_add(7), n, 0.9, 1);
        let ideal = idealized_risk_time(&est, &truth, 0).unwrap().value;
        let mut prev = 0.0;
        for t in [1, 2, 5, 10, 50, 200] {
            let excess = population_risk_closed(&est, &truth, t, sigma).unwrap() - sigma * sigma;
            prop_assert!(excess >= prev - 1e-12);
            let d: f64 = est.d.iter().zip(&truth.d).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(excess - d <= ideal + 1e-12);
            prev = excess;
        }
    }

    #[test]
    fn self_margin_is_two(seed in any::<u64>(), n in 1usize..6) {
        let a = member(seed, n, 0.9, 1).a;
        prop_assert_eq!(wqc_margin(&a, &a, 512).unwrap(), 2.0);
    }

    #[test]
    fn polytope_is_convex_and_projection_idempotent(
        x in prop::collection::vec(-2.0f64..2.0, 3),
        y in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let poly = AcqPolytope::build(3, 0.9, &Cone::default(), default_grid(3)).unwrap();
        let p = poly.project(&x, PROJECTION_TOL).unwrap().point;
        let q = poly.project(&y, PROJECTION_TOL).unwrap().point;
        let mid: Vec<f64> = p.iter().zip(&q).map(|(u, v)| 0.5 * (u + v)).collect();
        prop_assert!(poly.max_violation(&mid) <= PROJECTION_TOL);
        prop_assert!(spectral_radius_ok(&mid, 0.9).unwrap());
        let pp = poly.project(&p, PROJECTION_TOL).unwrap().point;
        for (u, v) in p.iter().zip(&pp) {
            prop_assert!((u - v).abs() <= 1e-10);
        }
    }

    #[test]
    fn generated_teachers_are_members(seed in any::<u64>(), n in 1usize..7, gaussian in any::<bool>()) {
        let strategy = if gaussian { Strategy::GaussianCoeff } else { Strategy::L1Ball };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(g) = random_acquiescent(n, 0.9, &Cone::default(), strategy, 1, 1, &mut rng) {
            prop_assert!(is_acquiescent(&g.params.a, 0.9, &Cone::default(), default_grid(n)).unwrap().member);
            prop_assert!(spectral_radius_ok(&g.params.a, 0.9).unwrap());
        }
    }

    #[test]
    fn random_roots_round_trip(seed in any::<u64>(), half in 1usize..6, alpha in 0.3f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rr = random_roots_poly(half, alpha, &mut rng).unwrap();
        prop_assume!(lds_core::poly::RootSet::new(rr.roots.clone()).min_separation() > 1e-3);
        for z in rr.poly.roots().unwrap().as_slice() {
            prop_assert!((z.norm() - alpha).abs() <= 1e-10, "{}", z.norm());
        }
    }
}

#[test]
fn gaussian_coefficients_accepted_more_than_half_the_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut accepted, attempts) = (0, 400);
    let s = lds_core::gen::gaussian_coeff_scale(8);
    for _ in 0..attempts {
        let a: Vec<f64> = (0..8).map(|_| s * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        if is_acquiescent(&a, 0.9, &Cone::default(), default_grid(8)).unwrap().member {
            accepted += 1;
        }
    }
    assert!(accepted * 2 > attempts, "{accepted}/{attempts}");
}

#[test]
fn every_sgd_iterate_is_feasible_and_keeps_positive_margin() {
    let (n, alpha, sigma, t_len) = (2, 0.9, 0.1, 64);
    let teacher = member(14, n, alpha, 1);
    let mut cfg = SgdConfig::constant(0.05);
    cfg.projection = Some(ProjectionSpec { alpha, cone: None, grid: None });
    let poly = cfg.projection.as_ref().unwrap().build(n).unwrap();
    let mut params = SystemParams::zeros(n, 1, 1).unwrap();
    for i in 0..500u64 {
        let mut rng = stream_rng(99, i + 1);
        let tr = sample_trajectory(&teacher, t_len, sigma, InputDist::Gaussian, H0Policy::Gaussian(1.0), &mut rng)
            .unwrap();
        params = sgd_train(std::slice::from_ref(&tr), &cfg, &params, None).unwrap().params;
        assert!(poly.max_violation(&params.a) <= PROJECTION_TOL);
        if i % 100 == 0 {
            assert!(wqc_margin(&teacher.a, &params.a, 4096).unwrap() > 0.0);
        }
    }
}
