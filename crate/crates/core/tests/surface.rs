use sensan_core::functional::Functional;
use sensan_core::model_space::GridDensity;
use sensan_core::sensitivity::sensitivity;
use sensan_core::surface::{
    information_matrix, numerical_information, surface_sensitivity, surface_sensitivity_numerical, Chart,
    CoordFunctional,
};
use sensan_core::tangent::PolicyMetric;

fn lattice() -> impl Iterator<Item = [f64; 2]> {
    (0..20).flat_map(|i| {
        (0..20).map(move |j| {
            let s = (i as f64 + 0.5) / 20.0;
            let t = (j as f64 + 0.5) / 20.0;
            [s, t * (1.0 - s)]
        })
    })
}

#[test]
fn sphere_sensitivity_is_minus_uv() {
    let (u, v) = (CoordFunctional::parse("u").unwrap(), CoordFunctional::parse("v").unwrap());
    let c = Chart::SphereMultinomial;
    let (mut exact, mut numeric) = (0.0f64, 0.0f64);
    for at in lattice() {
        let want = -at[0] * at[1];
        exact = exact.max((surface_sensitivity(&c, &u, &v, at).unwrap() - want).abs());
        numeric = numeric.max((surface_sensitivity_numerical(&c, &u, &v, at, 1e-5).unwrap() - want).abs());
    }
    assert!(exact < 1e-10, "{exact}");
    assert!(numeric < 1e-6, "{numeric}");
}

#[test]
fn numerical_scores_reproduce_the_metric() {
    let m = information_matrix(&Chart::SphereMultinomial, [0.25, 0.4]).unwrap();
    let n = numerical_information(&Chart::SphereMultinomial, [0.25, 0.4], 1e-5).unwrap();
    for (a, b) in m.iter().flatten().zip(n.iter().flatten()) {
        assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
    }
    assert!(numerical_information(&Chart::FlatNormal, [0.0, 0.0], 1e-5).is_err());
}

#[test]
fn agrees_with_three_cell_engine() {
    let psi = Functional::moment("0.5*(x-2)*(x-3)").unwrap();
    let nu = Functional::moment("-(x-1)*(x-3)").unwrap();
    for at in [[0.5, 0.3], [1.0 / 3.0, 1.0 / 3.0], [0.1, 0.7], [0.05, 0.05]] {
        let p = GridDensity::categorical(&[at[0], at[1], 1.0 - at[0] - at[1]]).unwrap();
        let r = sensitivity(&psi, &nu, &p, &PolicyMetric::Information).unwrap();
        let s = surface_sensitivity(
            &Chart::SphereMultinomial,
            &CoordFunctional::parse("u").unwrap(),
            &CoordFunctional::parse("v").unwrap(),
            at,
        )
        .unwrap();
        assert!((r.dpsi_dnu - s).abs() < 1e-8, "{at:?}: {} vs {s}", r.dpsi_dnu);
    }
}

#[test]
fn custom_chart_uses_supplied_information() {
    let c = Chart::custom("scaled", |[u, _]| Ok([[2.0 + u * u, 0.5], [0.5, 1.0]]));
    let f = CoordFunctional::parse("u*v").unwrap();
    let g = CoordFunctional::parse("v^2").unwrap();
    let at = [0.7, -0.2];
    let a = surface_sensitivity(&c, &f, &g, at).unwrap();
    let b = surface_sensitivity(&c, &g, &f, at).unwrap();
    assert!((a - b).abs() < 1e-12);
    let bad = Chart::custom("singular", |_| Ok([[1.0, 1.0], [1.0, 1.0]]));
    assert!(information_matrix(&bad, at).is_err());
}
