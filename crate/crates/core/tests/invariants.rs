use proptest::prelude::*;
use quasineutral::adjoint::{adjoint_rhs, apply_k, kernel_matrix};
use quasineutral::{assemble, solve_state, DopingProfile, Mesh1D, StateOptions, TrackingTargets};

/// Sign-changing doping on a random small mesh.
fn instance() -> impl Strategy<Value = (usize, Vec<f64>, f64, f64)> {
    (6usize..40).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(-1.5f64..1.5, n),
            prop::sample::select(vec![1e-6, 1e-4, 1e-2]),
            prop::sample::select(vec![0.0, 1e-5, 1e-3, 1e-1]),
        )
    })
}

fn setup(n: usize, mut c: Vec<f64>, delta2: f64) -> (quasineutral::AssembledForms, DopingProfile) {
    c[0] = c[0].abs() + 0.05;
    c[n - 1] = -(c[n - 1].abs() + 0.05);
    let forms = assemble(&Mesh1D::unit(n).unwrap());
    let dp = DopingProfile::reference(&forms, c, delta2).unwrap();
    (forms, dp)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn state_is_normalized_and_zero_mean((n, c, delta2, lambda2) in instance()) {
        let (forms, dp) = setup(n, c, delta2);
        let sol = solve_state(&forms, &dp, lambda2, &StateOptions::with_tol(1e-10)).unwrap();
        let scale = sol.v.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(forms.mean(&sol.v).abs() <= 1e-10 * scale);
        let n_int = forms.integrate(&sol.n).unwrap();
        let p_int = forms.integrate(&sol.p).unwrap();
        prop_assert!((n_int - dp.totals.n_total).abs() <= 1e-10 * dp.totals.n_total);
        prop_assert!((p_int - dp.totals.p_total).abs() <= 1e-10 * dp.totals.p_total);
        // global neutrality: ∫(n − p − C) = 0
        let c_int = forms.integrate(&dp.c).unwrap();
        prop_assert!((n_int - p_int - c_int).abs() <= 1e-10 * (n_int + p_int));
        prop_assert!((sol.gamma2 - (sol.alpha * sol.beta).sqrt()).abs() <= 1e-12 * sol.gamma2);
    }

    #[test]
    fn carrier_sum_is_bounded_below((n, c, delta2, lambda2) in instance()) {
        let (forms, dp) = setup(n, c, delta2);
        let sol = solve_state(&forms, &dp, lambda2, &StateOptions::default()).unwrap();
        // n·p = αβ = γ⁴ nodally, so n + p ≥ 2γ² by AM-GM
        for i in 0..n {
            prop_assert!(sol.n[i] + sol.p[i] >= 2.0 * sol.gamma2 * (1.0 - 1e-12));
            prop_assert!((sol.n[i] * sol.p[i] / sol.gamma2.powi(2) - 1.0).abs() < 1e-9);
        }
        if lambda2 == 0.0 {
            for i in 0..n {
                prop_assert!((sol.n[i] - sol.p[i] - dp.c[i]).abs() <= 1e-9 * (1.0 + dp.c[i].abs()));
            }
        }
    }

    #[test]
    fn kernel_is_symmetric_with_constants_in_its_null_space((n, c, delta2, lambda2) in instance()) {
        let (forms, dp) = setup(n, c, delta2);
        let sol = solve_state(&forms, &dp, lambda2, &StateOptions::default()).unwrap();
        let km = kernel_matrix(&forms, &sol);
        let scale = km.abs().max();
        prop_assert!((&km - km.transpose()).abs().max() <= 1e-12 * scale);
        let k1 = apply_k(&forms, &sol, &vec![1.0; n]).unwrap();
        let dens = sol.n.iter().chain(&sol.p).fold(0.0f64, |m, v| m.max(*v));
        prop_assert!(k1.iter().all(|v| v.abs() <= 1e-12 * dens));
    }

    #[test]
    fn adjoint_load_has_zero_integral(
        (n, c, delta2, lambda2) in instance(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let (forms, dp) = setup(n, c, delta2);
        let sol = solve_state(&forms, &dp, lambda2, &StateOptions::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n_d: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let p_d: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let targets = TrackingTargets::new(&forms, n_d, p_d).unwrap();
        let f = adjoint_rhs(&forms, &sol, &targets).unwrap();
        let scale: f64 = f.iter().zip(&forms.weights).map(|(f, w)| (f * w).abs()).sum();
        prop_assert!(forms.integrate(&f).unwrap().abs() <= 1e-12 * scale.max(1e-300));
    }

    #[test]
    fn constant_doping_gives_flat_potential(c in -2.0f64..2.0, delta2 in 1e-6f64..1e-1, lambda2 in prop::sample::select(vec![0.0, 1e-6, 1e-2])) {
        let forms = assemble(&Mesh1D::unit(17).unwrap());
        let dp = DopingProfile::reference(&forms, vec![c; 17], delta2).unwrap();
        let sol = solve_state(&forms, &dp, lambda2, &StateOptions::default()).unwrap();
        prop_assert!(sol.v.iter().all(|v| v.abs() <= 1e-10));
        for i in 0..17 {
            prop_assert!((sol.n[i] - sol.p[i] - c).abs() <= 1e-10 * (1.0 + c.abs()));
        }
    }
}
