use std::sync::Arc;

use sensan_core::functional::{influence_analytic, influence_numerical, Functional, MollifierSchedule};
use sensan_core::grid::Grid;
use sensan_core::model_space::GridDensity;

fn densities() -> Vec<(&'static str, GridDensity)> {
    let unit = Arc::new(Grid::line(0.0, 1.0, 801).unwrap());
    let wide = Arc::new(Grid::line(-6.0, 6.0, 801).unwrap());
    vec![
        ("uniform", GridDensity::uniform(unit.clone()).unwrap()),
        ("beta(2,5)", GridDensity::beta(unit, 2.0, 5.0).unwrap()),
        ("normal", GridDensity::normal(wide, 0.0, 1.0).unwrap()),
    ]
}

fn sup_gap(f: &Functional, p: &GridDensity, skip: impl Fn(f64) -> bool) -> f64 {
    let s = MollifierSchedule::for_grid(p.grid());
    let num = influence_numerical(f, p, &s).unwrap().influence.node_values();
    let ana = influence_analytic(f, p).unwrap().node_values();
    let nodes = p.grid().axes()[0].nodes().to_vec();
    nodes
        .iter()
        .zip(num.iter().zip(&ana))
        .filter(|(x, _)| !skip(**x))
        .map(|(_, (a, b))| (a - b).abs())
        .fold(0.0, f64::max)
}

#[test]
fn smooth_functionals_match_closed_forms() {
    for (label, p) in densities() {
        for f in [Functional::mean(0), Functional::variance(0)] {
            let gap = sup_gap(&f, &p, |_| false);
            assert!(gap < 1e-2, "{} on {label}: {gap}", f.name);
        }
    }
}

#[test]
fn median_matches_outside_the_smoothing_window() {
    let (_, p) = densities().swap_remove(1);
    let f = Functional::median(0);
    let m = f.eval(&p).unwrap();
    let s = MollifierSchedule::for_grid(p.grid());
    let gap = sup_gap(&f, &p, |x| (x - m).abs() <= 2.0 * s.sigma0);
    assert!(gap < 5e-2, "{gap}");
}
