mod common;

use approx::assert_relative_eq;
use common::{kernel_integral_oracle, monomial_norm_sq, norm_sq_oracle};
use proptest::prelude::*;
use sfrbsde::kernel::{
    inner_product, kernel_transform, norm_sq, CoefficientSet, DeterministicFn, HurstModel,
    QuadratureSpec, SingularityTreatment,
};

fn h(v: f64) -> HurstModel {
    HurstModel::new(v).unwrap()
}

#[test]
fn monomial_formula_frozen_values() {
    // k = 1, t = 1: 1 / (2H + 2)
    assert_relative_eq!(
        monomial_norm_sq(1, 1.0, 0.75),
        1.0 / 3.5,
        max_relative = 1e-15
    );
    // k = 0 reduces to t^{2H}
    assert_relative_eq!(
        monomial_norm_sq(0, 2.0, 0.6),
        2f64.powf(1.2),
        max_relative = 1e-15
    );
}

#[test]
fn production_matches_exact_monomials() {
    let q = QuadratureSpec::default();
    for hv in [0.55, 0.6, 0.75, 0.9] {
        for k in 0..=3u32 {
            let xi = DeterministicFn::from_fn(format!("s^{k}"), move |s| s.powi(k as i32));
            for t in [0.3, 1.0, 2.0] {
                let got = norm_sq(&xi, t, h(hv), &q).unwrap();
                let exact = monomial_norm_sq(k, t, hv);
                assert!(
                    ((got - exact) / exact).abs() <= 1e-6,
                    "H={hv} k={k} t={t}: {got} vs {exact}"
                );
            }
        }
    }
}

#[test]
fn constant_closed_forms() {
    let q = QuadratureSpec::default();
    for hv in [0.55, 0.6, 0.75, 0.9, 0.95] {
        for t in [0.05, 0.5, 1.0, 3.0] {
            let c = 1.7;
            let ns = norm_sq(&DeterministicFn::constant(c), t, h(hv), &q).unwrap();
            assert_relative_eq!(ns, c * c * t.powf(2.0 * hv), max_relative = 1e-6);
            let hat = kernel_transform(&DeterministicFn::constant(c), t, h(hv), &q).unwrap();
            assert_relative_eq!(hat, c * hv * t.powf(2.0 * hv - 1.0), max_relative = 1e-6);
        }
    }
}

#[test]
fn subtraction_oracle_reproduces_closed_forms() {
    let one = |_: f64| 1.0;
    let zero = |_: f64| 0.0;
    let got = norm_sq_oracle(&one, &zero, 1.0, 0.75, 200);
    assert_relative_eq!(got, 1.0, max_relative = 1e-6);
    let id = |s: f64| s;
    let got = norm_sq_oracle(&id, &one, 1.0, 0.75, 200);
    assert_relative_eq!(got, 1.0 / 3.5, max_relative = 1e-6);
}

#[test]
fn production_matches_brute_force_oracle_at_tenfold_resolution() {
    let q = QuadratureSpec::default();
    let fine = 10 * q.panels();
    let w = 2.0 * std::f64::consts::PI;
    for hv in [0.6, 0.75, 0.9] {
        let f = move |s: f64| 1.0 + 0.5 * (w * s).sin();
        let df = move |s: f64| 0.5 * w * (w * s).cos();
        let xi = DeterministicFn::sinusoidal(1.0, 0.5, 1.0);
        let oracle = norm_sq_oracle(&f, &df, 1.0, hv, fine);
        let prod = norm_sq(&xi, 1.0, h(hv), &q).unwrap();
        assert!((oracle - prod).abs() <= 1e-6, "H={hv}: {prod} vs {oracle}");
        for t in [0.3, 1.0] {
            let oracle = kernel_integral_oracle(&f, &df, t, t, hv, fine);
            let prod = kernel_transform(&xi, t, h(hv), &q).unwrap();
            assert!(
                (oracle - prod).abs() <= 1e-6,
                "H={hv} t={t}: {prod} vs {oracle}"
            );
        }
    }
}

#[test]
fn graded_mesh_agrees_with_power_substitution() {
    let a = QuadratureSpec::default();
    let b = a.with_treatment(SingularityTreatment::GradedMesh);
    let xi = DeterministicFn::sinusoidal(1.0, 0.3, 2.0);
    for hv in [0.6, 0.8] {
        let x = norm_sq(&xi, 1.0, h(hv), &a).unwrap();
        let y = norm_sq(&xi, 1.0, h(hv), &b).unwrap();
        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn coefficient_tables_match_direct_evaluation() {
    let q = QuadratureSpec::default();
    let c = CoefficientSet::new(
        DeterministicFn::zero(),
        DeterministicFn::constant(0.5),
        DeterministicFn::sinusoidal(1.0, 0.4, 1.0),
        h(0.7),
        1.0,
        64,
        q,
    )
    .unwrap();
    c.validate().unwrap();
    for k in [8, 32, 64] {
        let t = c.times()[k];
        let ns = norm_sq(c.sigma2(), t, h(0.7), &q).unwrap();
        assert!((c.norm_sq_table()[k] - ns).abs() <= 1e-8);
        assert_relative_eq!(c.sigma_abs_sq_table()[k], 0.25 * t + ns, epsilon = 1e-8);
    }
    assert_eq!(c.lambda_factor(), 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn inner_product_is_bilinear_and_symmetric(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        hv in 0.55f64..0.95,
        t in 0.1f64..2.0,
    ) {
        let q = QuadratureSpec::default();
        let x = DeterministicFn::linear(a);
        let y = DeterministicFn::constant(b);
        let xy = inner_product(&x, &y, t, h(hv), &q).unwrap();
        let yx = inner_product(&y, &x, t, h(hv), &q).unwrap();
        prop_assert!((xy - yx).abs() <= 1e-10 * (1.0 + xy.abs()));
        let one = DeterministicFn::linear(1.0);
        let unit = DeterministicFn::constant(1.0);
        let base = inner_product(&one, &unit, t, h(hv), &q).unwrap();
        prop_assert!((xy - a * b * base).abs() <= 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn norm_is_nonnegative_and_scales_quadratically(
        c in -3.0f64..3.0,
        hv in 0.55f64..0.95,
        t in 0.05f64..2.0,
    ) {
        let q = QuadratureSpec::default();
        let base = norm_sq(&DeterministicFn::sinusoidal(1.0, 0.5, 1.0), t, h(hv), &q).unwrap();
        let scaled = norm_sq(&DeterministicFn::sinusoidal(c, 0.5, 1.0), t, h(hv), &q).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((scaled - c * c * base).abs() <= 1e-9 * (1.0 + base));
    }
}
