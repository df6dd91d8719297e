use std::collections::BTreeMap;

use hjb_core::hamiltonian::{
    assemble_quadratic, dual_maximizer, hamiltonian_closed, hamiltonian_maxform, hamiltonian_truncated,
    optimal_portfolio, portfolio_objective, running_cost, QuadraticForm,
};
use hjb_core::model::{builtin_model, BuiltinModel, CatalogOptions, DerivedCoefficients};
use nalgebra::DVector;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = (usize, f64, f64, f64, f64)> {
    (0..3usize, -3.0..0.9f64, 0.0..1.0f64, -3.0..3.0f64, -6.0..6.0f64)
        .prop_filter("a away from zero", |(_, a, ..)| a.abs() > 0.05)
}

fn form((kind, a, t, x, y): (usize, f64, f64, f64, f64)) -> (DerivedCoefficients, QuadraticForm) {
    let model = builtin_model(BuiltinModel::all()[kind], &BTreeMap::new(), CatalogOptions::default())
        .unwrap()
        .with_power(a)
        .unwrap();
    let coeffs = model.coefficients(t, &[x, y]).unwrap();
    let qf = assemble_quadratic(&coeffs, a).unwrap();
    (coeffs, qf)
}

fn vector() -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-5.0..5.0f64, 2).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn maxform_equals_closed_form(p in point(), r in vector()) {
        let a = p.1;
        let (coeffs, qf) = form(p);
        let closed = hamiltonian_closed(&qf, &r);
        let maxform = hamiltonian_maxform(&coeffs, a, &r);
        prop_assert!((closed - maxform).abs() <= 1e-9 * (1.0 + closed.abs()));
    }

    #[test]
    fn optimal_portfolio_beats_perturbations(p in point(), r in vector(), d in -1.0..1.0f64) {
        let a = p.1;
        let (coeffs, _) = form(p);
        let best = optimal_portfolio(&coeffs, a, &r).weights;
        let other = &best + DVector::from_element(best.len(), d);
        prop_assert!(portfolio_objective(&coeffs, a, &r, &best) >= portfolio_objective(&coeffs, a, &r, &other) - 1e-12);
    }

    #[test]
    fn duality_at_the_maximizer(p in point(), r in vector()) {
        let (_, qf) = form(p);
        let nu = dual_maximizer(&qf, &r);
        let h = hamiltonian_closed(&qf, &r);
        prop_assert!((-nu.dot(&r) - running_cost(&qf, &nu) - h).abs() <= 1e-9 * (1.0 + h.abs()));
    }

    #[test]
    fn cutoff_properties(p in point(), r in vector(), small in 0.01..2.0f64, factor in 1.0..3.0f64) {
        let (_, qf) = form(p);
        let h = hamiltonian_closed(&qf, &r);
        let unconstrained = dual_maximizer(&qf, &r).norm();
        let lower = hamiltonian_truncated(&qf, &r, small).unwrap();
        let upper = hamiltonian_truncated(&qf, &r, small * factor).unwrap();
        let tol = 1e-10 * (1.0 + h.abs());
        prop_assert!(lower.value <= h + tol && upper.value <= h + tol);
        prop_assert!(lower.value <= upper.value + tol);
        prop_assert!(lower.maximizer.norm() <= small * (1.0 + 1e-12));
        prop_assert!(lower.multiplier >= 0.0);
        if lower.active {
            prop_assert!(lower.kkt_residual <= 1e-9);
        }
        if unconstrained <= small {
            prop_assert!(!lower.active);
            prop_assert_eq!(lower.value, h);
        }
    }

    #[test]
    fn schur_factors_invert_a(p in point(), v in vector()) {
        let (_, qf) = form(p);
        let via_factors = qf.solve_a(&v);
        let dense = qf.a_mat.clone().lu().solve(&v).unwrap();
        prop_assert!((&via_factors - &dense).norm() <= 1e-10 * (1.0 + dense.norm()));
        prop_assert!((qf.apply_a(&v) - &qf.a_mat * &v).norm() <= 1e-12 * (1.0 + v.norm()));
    }
}
