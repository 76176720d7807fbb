use std::f64::consts::PI;
use std::sync::Arc;

use sensan_core::functional::Functional;
use sensan_core::grid::Grid;
use sensan_core::model_space::GridDensity;
use sensan_core::sensitivity::{counterfactual_report, sensitivity, verify_first_order};
use sensan_core::tangent::PolicyMetric;

fn unit() -> Arc<Grid> {
    Arc::new(Grid::line(0.0, 1.0, 801).unwrap())
}

#[test]
fn mean_to_median_on_truncated_normal() {
    let p = GridDensity::normal(Arc::new(Grid::line(-6.0, 6.0, 801).unwrap()), 0.0, 1.0).unwrap();
    let r = sensitivity(&Functional::mean(0), &Functional::median(0), &p, &PolicyMetric::Information).unwrap();
    assert!((r.dpsi_dnu - 1.0).abs() < 1e-3, "{}", r.dpsi_dnu);
    assert!((r.S - 2.0 / PI).abs() < 1e-3, "{}", r.S);
}

#[test]
fn small_target_moves_the_mean_by_half() {
    let p = GridDensity::uniform(unit()).unwrap();
    let r = counterfactual_report(&Functional::mean(0), &Functional::median(0), &p, &PolicyMetric::Information, 0.01, Default::default())
        .unwrap();
    assert!((r.psi_change() - 0.005).abs() < 5e-4);
    assert!((r.predicted_psi_after - r.psi_before - 0.005).abs() < 1e-9);
    let zero = counterfactual_report(&Functional::mean(0), &Functional::median(0), &p, &PolicyMetric::Information, 0.0, Default::default())
        .unwrap();
    assert_eq!(zero.nu_after, zero.nu_before);
    assert_eq!(zero.psi_after, zero.psi_before);
}

fn nonlinear_cases() -> Vec<(&'static str, Functional, Functional, GridDensity, PolicyMetric)> {
    let u = GridDensity::uniform(unit()).unwrap();
    let b = GridDensity::beta(unit(), 2.0, 5.0).unwrap();
    let q = GridDensity::from_fn_shape(unit(), |x| 0.5 + x[0]).unwrap();
    let pol = PolicyMetric::policy(&b, &q, None).unwrap();
    vec![
        ("variance/median", Functional::variance(0), Functional::median(0), u.clone(), PolicyMetric::Information),
        ("q75/median", Functional::quantile(0.75, 0).unwrap(), Functional::median(0), u, PolicyMetric::Information),
        ("variance/median policy", Functional::variance(0), Functional::median(0), b.clone(), pol.clone()),
        ("median/q30 policy", Functional::median(0), Functional::quantile(0.3, 0).unwrap(), b, pol),
    ]
}

#[test]
fn remainders_are_quadratic() {
    let hs = [1e-2, 5e-3, 2.5e-3];
    for (label, psi, nu, p, m) in nonlinear_cases() {
        let t = verify_first_order(&psi, &nu, &p, &m, &hs).unwrap();
        for slope in [t.nu_slope, t.psi_slope] {
            let s = slope.expect(label);
            assert!((s - 2.0).abs() < 0.3, "{label}: {s}");
        }
    }
}

#[test]
fn mean_has_no_remainder_but_its_counterfactual_consistency_does() {
    let p = GridDensity::uniform(unit()).unwrap();
    let t = verify_first_order(&Functional::mean(0), &Functional::median(0), &p, &PolicyMetric::Information, &[1e-2, 5e-3, 2.5e-3])
        .unwrap();
    assert!(t.psi_slope.is_none());
    assert!((t.nu_slope.unwrap() - 2.0).abs() < 0.3);
    assert!((t.consistency_slope.unwrap() - 2.0).abs() < 0.3);
}
