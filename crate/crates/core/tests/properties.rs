use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use sensan_core::field::Field;
use sensan_core::functional::Functional;
use sensan_core::gmm::{gmm_influence, gmm_solve, MomentSpec};
use sensan_core::grid::Grid;
use sensan_core::model_space::{likelihood_ratio, GridDensity};
use sensan_core::sensitivity::sensitivity;
use sensan_core::surface::{coordinate_gradient, information_matrix, riesz_pairing, surface_sensitivity, Chart, CoordFunctional};
use sensan_core::tangent::{center, grad_op_apply, grad_op_inverse, inner, PolicyMetric, TangentVector};

fn unit() -> Arc<Grid> {
    Arc::new(Grid::line(0.0, 1.0, 201).unwrap())
}

fn shape() -> impl Strategy<Value = [f64; 3]> {
    [0.0..2.0f64, 0.0..2.0f64, 0.0..2.0f64]
}

fn density(c: [f64; 3]) -> GridDensity {
    GridDensity::from_fn_shape(unit(), |x| 0.3 + c[0] * x[0] + c[1] * x[0] * x[0] + c[2] * (1.0 - x[0]).powi(3)).unwrap()
}

fn tangent(p: &GridDensity, c: [f64; 3]) -> TangentVector {
    let f = Field::from_fn(p.grid().clone(), |x| c[0] * x[0] + c[1] * (6.0 * x[0]).sin() + c[2] * x[0].powi(3));
    center(&f, p).unwrap()
}

fn coef() -> impl Strategy<Value = [f64; 3]> {
    [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn densities_normalize_and_cdf_inverts(c in shape(), tau in 0.02..0.98f64) {
        let p = density(c);
        let one = Field::constant(p.grid().clone(), 1.0);
        prop_assert!((p.integrate(&one).unwrap() - 1.0).abs() < 1e-12);
        let cdf = p.marginal_cdf(0).unwrap();
        let q = cdf.inverse(tau).unwrap();
        prop_assert!((cdf.at(q) - tau).abs() < 1e-10);
    }

    #[test]
    fn ratio_changes_measure(cp in shape(), cq in shape(), cf in coef()) {
        let (p, q) = (density(cp), density(cq));
        let r = likelihood_ratio(&p, &q, None).unwrap();
        prop_assume!(!r.clamped());
        let f = Field::from_fn(p.grid().clone(), |x| cf[0] + cf[1] * x[0] + cf[2] * (3.0 * x[0]).cos());
        let direct = p.integrate(&f).unwrap();
        let via_q = q.integrate(&f.mul(r.values()).unwrap()).unwrap();
        prop_assert!((direct - via_q).abs() < 1e-8, "{} vs {}", direct, via_q);
    }

    #[test]
    fn gradient_operator_round_trip_and_adjoint(cp in shape(), cq in shape(), cu in coef(), cv in coef()) {
        let p = density(cp);
        let m = PolicyMetric::policy(&p, &density(cq), None).unwrap();
        let (u, v) = (tangent(&p, cu), tangent(&p, cv));
        let back = grad_op_inverse(&grad_op_apply(&v, &m).unwrap(), &m).unwrap();
        prop_assert!(back.sub(&v).unwrap().norm2_p().unwrap().sqrt() < 1e-8);
        // g(A* u, v) = ⟨u, v⟩_P
        let lhs = inner(&grad_op_apply(&u, &m).unwrap(), &v, &m).unwrap();
        prop_assert!((lhs - u.dot_p(&v).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sensitivity_is_symmetric_and_bounded(cp in shape(), cq in shape(), tau in 0.2..0.8f64) {
        let p = density(cp);
        let m = PolicyMetric::policy(&p, &density(cq), None).unwrap();
        let (a, b) = (Functional::variance(0), Functional::quantile(tau, 0).unwrap());
        let ab = sensitivity(&a, &b, &p, &m).unwrap();
        let ba = sensitivity(&b, &a, &p, &m).unwrap();
        prop_assert!((ab.dpsi_dnu - ba.dpsi_dnu).abs() < 1e-10 * (1.0 + ab.dpsi_dnu.abs()));
        prop_assert!(ab.R >= 0.0 && ab.R <= 1.0 + 1e-10);
        prop_assert!(ab.Delta >= 0.0 && ab.Delta <= 1.0 + 1e-10);
        ab.validate().unwrap();
    }

    #[test]
    fn policy_at_p_is_information(cp in shape()) {
        let p = density(cp);
        let (a, b) = (Functional::mean(0), Functional::median(0));
        let info = sensitivity(&a, &b, &p, &PolicyMetric::Information).unwrap();
        let pol = sensitivity(&a, &b, &p, &PolicyMetric::policy(&p, &p, None).unwrap()).unwrap();
        prop_assert!((info.dpsi_dnu - pol.dpsi_dnu).abs() < 1e-8);
        prop_assert!((info.S - pol.S).abs() < 1e-8);
    }

    #[test]
    fn surface_is_symmetric(u in 0.05..0.6f64, t in 0.05..0.95f64, i in 0usize..6, j in 0usize..6) {
        let fs = ["u", "v", "u*v", "u^2 - v", "3*u + v^3", "(u - v)^2"];
        let at = [u, t * (1.0 - u)];
        let (f, g) = (CoordFunctional::parse(fs[i]).unwrap(), CoordFunctional::parse(fs[j]).unwrap());
        for c in Chart::builtins() {
            let a = surface_sensitivity(&c, &f, &g, at).unwrap();
            let b = surface_sensitivity(&c, &g, &f, at).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
            let grad = coordinate_gradient(&c, &f, at).unwrap();
            let back = riesz_pairing(information_matrix(&c, at).unwrap(), grad);
            let want = f.partials(at);
            prop_assert!((back[0] - want[0]).abs() < 1e-10 && (back[1] - want[1]).abs() < 1e-10);
        }
    }
}

fn normal_p() -> GridDensity {
    GridDensity::normal(Arc::new(Grid::line(-9.0, 11.0, 2001).unwrap()), 1.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gmm_influence_at_correct_specification(a in 0.2..3.0f64, b in -0.5..0.5f64, d in 0.2..3.0f64) {
        prop_assume!(a * d - b * b > 0.05);
        let p = normal_p();
        let spec = MomentSpec::parse(&["x - th0", "x^2 - th0^2 - 1"], 1, vec![(-5.0, 5.0)]).unwrap();
        let w = DMatrix::from_row_slice(2, 2, &[a, b, b, d]);
        let sol = gmm_solve(&p, &spec, &w).unwrap();
        let psi = &gmm_influence(&p, &spec, &sol).unwrap()[0];
        // −(GᵀWG)⁻¹ GᵀW g
        let g = &sol.g;
        let k = -(g.transpose() * &w * g)[(0, 0)].recip() * (g.transpose() * &w);
        let t = sol.theta[0];
        let oracle = Field::from_fn(p.grid().clone(), |x| k[(0, 0)] * (x[0] - t) + k[(0, 1)] * (x[0] * x[0] - t * t - 1.0));
        let oracle = center(&oracle, &p).unwrap();
        prop_assert!(psi.sub(&oracle).unwrap().norm2_p().unwrap().sqrt() < 1e-8);
    }
}
