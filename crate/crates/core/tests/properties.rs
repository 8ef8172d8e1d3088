use proptest::prelude::*;
use sfrbsde::averaging::{
    alpha0_closed_form, check_theorem_rate, estimate_lipschitz, solve_alpha0, SamplingBox,
};
use sfrbsde::bsde::Generator;
use sfrbsde::config::ExperimentConfig;
use sfrbsde::kernel::HurstModel;
use sfrbsde::paths::{FbmMethod, PathEnsemble, RngSpec, TimeGrid};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha0_bisection_matches_closed_form(
        l in 0.1f64..5.0,
        c1 in 0.2f64..3.0,
        hv in 0.55f64..0.95,
        frac in 0.01f64..0.9,
    ) {
        let h = HurstModel::new(hv).unwrap();
        let m = c1.min(1.0);
        // eps^H = frac * m keeps the equation feasible
        let eps = (frac * m).powf(1.0 / hv);
        let exact = alpha0_closed_form(l, c1, eps, h).unwrap();
        let solved = solve_alpha0(l, c1, eps, h).unwrap();
        prop_assert!((solved - exact).abs() <= 1e-9 * exact.max(1.0), "{solved} vs {exact}");
    }

    #[test]
    fn alpha0_rejects_infeasible_epsilon(l in 0.1f64..5.0, c1 in 0.2f64..0.9, hv in 0.55f64..0.95) {
        let h = HurstModel::new(hv).unwrap();
        let eps = (c1.min(1.0) * 1.01).powf(1.0 / hv).min(1.0);
        prop_assert!(solve_alpha0(l, c1, eps, h).is_err());
        prop_assert!(alpha0_closed_form(l, c1, eps, h).is_none());
    }

    #[test]
    fn rate_fit_recovers_power_law(p in 0.2f64..5.0, c in 0.01f64..10.0) {
        let eps = [0.5, 0.35, 0.25, 0.18, 0.125];
        let mse: Vec<f64> = eps.iter().map(|e: &f64| c * e.powf(p)).collect();
        let r = check_theorem_rate(&eps, &mse, f64::INFINITY).unwrap();
        prop_assert!((r.slope - p).abs() <= 1e-9);
        prop_assert!((r.intercept - c.ln()).abs() <= 1e-8);
        prop_assert_eq!(r.epsilon1, Some(0.5));
    }

    #[test]
    fn epsilon1_is_largest_prefix_below_delta(vals in prop::collection::vec(0.0f64..1.0, 3..8), delta in 0.0f64..1.0) {
        let n = vals.len();
        let eps: Vec<f64> = (0..n).map(|i| 0.9 * 0.8f64.powi(i as i32)).collect();
        let r = check_theorem_rate(&eps, &vals.iter().map(|v| v + 1e-3).collect::<Vec<_>>(), delta).unwrap();
        // eps is decreasing, so walk from the smallest
        let mut expect = None;
        for i in (0..n).rev() {
            if vals[i] + 1e-3 <= delta {
                expect = Some(eps[i]);
            } else {
                break;
            }
        }
        prop_assert_eq!(r.epsilon1, expect);
    }

    #[test]
    fn sampled_lipschitz_stays_below_declared(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, seed in 0u64..1000) {
        let gen = Generator::benchmark(a, b, c, 0.1, 1.0);
        let est = estimate_lipschitz(&gen, &SamplingBox::symmetric(0.0, 3.0), 1.0, 500, seed).unwrap();
        prop_assert!(est.declared);
        prop_assert!(est.sampled_max <= est.value * (1.0 + 1e-12));
    }

    #[test]
    fn config_text_round_trips(
        seed in 0u64..u64::MAX,
        hurst in 0.51f64..0.99,
        beta_frac in 0.01f64..0.99,
        n_paths in 1000usize..200_000,
        delta1 in 1e-6f64..1.0,
    ) {
        let cfg = ExperimentConfig {
            seed,
            hurst,
            beta: beta_frac / (2.0 * hurst),
            n_paths,
            delta1,
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::parse_str(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_beta_at_or_above_bound(hurst in 0.51f64..0.99, over in 1.0f64..1.5) {
        let cfg = ExperimentConfig {
            hurst,
            beta: (over / (2.0 * hurst)).min(0.999),
            ..ExperimentConfig::default()
        };
        prop_assume!(cfg.beta >= 1.0 / (2.0 * hurst));
        prop_assert!(!cfg.violations().is_empty());
        prop_assert!(ExperimentConfig::parse_str(&cfg.to_text()).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn path_generation_is_deterministic_and_prefix_stable(seed in 0u64..10_000, hv in 0.55f64..0.95, circ in any::<bool>()) {
        let h = HurstModel::new(hv).unwrap();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let method = if circ { FbmMethod::Circulant } else { FbmMethod::Cholesky };
        let a = PathEnsemble::generate(grid, h, 40, RngSpec::new(seed), method).unwrap();
        let b = PathEnsemble::generate(grid, h, 40, RngSpec::new(seed), method).unwrap();
        let c = PathEnsemble::generate(grid, h, 15, RngSpec::new(seed), method).unwrap();
        prop_assert_eq!(a.fractional(), b.fractional());
        prop_assert_eq!(a.brownian(), b.brownian());
        for p in 0..15 {
            prop_assert_eq!(a.fractional().row(p), c.fractional().row(p));
            prop_assert_eq!(a.brownian().row(p), c.brownian().row(p));
        }
    }
}
