//! Acceptance suite: one line per criterion with the measured values and runtime.
//! Runs as a plain binary so the summary is always printed.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sensan_core::education::{replicate_education, EducationConfig};
use sensan_core::estimation::{mc_consistency, mc_joint_asymptotics, McConfig, McMetric};
use sensan_core::field::Field;
use sensan_core::functional::{influence_analytic, influence_numerical, Functional, MollifierSchedule};
use sensan_core::gmm::{
    gmm_efficient_influence, gmm_influence, gmm_out_direction, gmm_project_tangent, gmm_solve, MomentSpec,
};
use sensan_core::grid::Grid;
use sensan_core::model_space::GridDensity;
use sensan_core::sensitivity::{counterfactual_density, loglog_slope, sensitivity, verify_first_order, SensitivityReport};
use sensan_core::surface::{
    coordinate_gradient, information_matrix, riesz_pairing, surface_sensitivity, surface_sensitivity_numerical,
    Chart, CoordFunctional,
};
use sensan_core::tangent::{center, grad_op_apply, grad_op_inverse, PolicyMetric, TangentVector};

type Outcome = (bool, String);

fn line(n: usize) -> Arc<Grid> {
    Arc::new(Grid::line(0.0, 1.0, n).unwrap())
}

fn std_normal() -> GridDensity {
    GridDensity::normal(Arc::new(Grid::line(-6.0, 6.0, 801).unwrap()), 0.0, 1.0).unwrap()
}

fn sphere_lattice() -> Outcome {
    let (u, v) = (CoordFunctional::parse("u").unwrap(), CoordFunctional::parse("v").unwrap());
    let c = Chart::SphereMultinomial;
    let (mut exact, mut numeric) = (0.0f64, 0.0f64);
    for i in 0..20 {
        for j in 0..20 {
            let s = (i as f64 + 0.5) / 20.0;
            let at = [s, (j as f64 + 0.5) / 20.0 * (1.0 - s)];
            let want = -at[0] * at[1];
            exact = exact.max((surface_sensitivity(&c, &u, &v, at).unwrap() - want).abs());
            numeric = numeric.max((surface_sensitivity_numerical(&c, &u, &v, at, 1e-5).unwrap() - want).abs());
        }
    }
    (exact < 1e-10 && numeric < 1e-6, format!("max |err| analytic {exact:.1e}, numerical scores {numeric:.1e}"))
}

fn random_poly(rng: &mut ChaCha8Rng) -> String {
    let terms = rng.random_range(1..=4);
    (0..terms)
        .map(|_| {
            let c: f64 = rng.random_range(-3.0..3.0);
            let (i, j) = (rng.random_range(0..=3u32), rng.random_range(0..=3u32));
            format!("({c:.6})*u^{i}*v^{j}")
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

fn riesz_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let f = CoordFunctional::parse(&random_poly(&mut rng)).unwrap();
        for chart in Chart::builtins() {
            let at = match chart {
                Chart::SphereMultinomial => [rng.random_range(0.05..0.45), rng.random_range(0.05..0.45)],
                Chart::HyperbolicNormal => [rng.random_range(-2.0..2.0), rng.random_range(0.3..2.0)],
                _ => [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            };
            let [a, b] = coordinate_gradient(&chart, &f, at).unwrap();
            let back = match chart.scores(at).unwrap() {
                // pair the recombined gradient with the score vectors themselves
                Some([xu, xv]) => {
                    let grad: Vec<f64> = (0..3).map(|k| a * xu[k] + b * xv[k]).collect();
                    let dot = |x: [f64; 3]| grad.iter().zip(x).map(|(g, x)| g * x).sum::<f64>();
                    [dot(xu), dot(xv)]
                }
                None => riesz_pairing(information_matrix(&chart, at).unwrap(), [a, b]),
            };
            let want = f.partials(at);
            worst = worst.max((back[0] - want[0]).abs()).max((back[1] - want[1]).abs());
        }
    }
    (worst < 1e-10, format!("50 functionals x 3 charts, max |<grad f, x_a> - f_a)| {worst:.1e}"))
}

fn positive_shape(rng: &mut ChaCha8Rng, grid: &Arc<Grid>) -> GridDensity {
    let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..2.0));
    GridDensity::from_fn_shape(grid.clone(), move |x| {
        0.2 + c[0] * x[0] + c[1] * x[0] * x[0] + c[2] * (1.0 - x[0]).powi(3) + c[3] * (5.0 * x[0]).sin().powi(2)
    })
    .unwrap()
}

fn grad_operator_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = line(401);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = positive_shape(&mut rng, &grid);
        let q = positive_shape(&mut rng, &grid);
        let m = PolicyMetric::policy(&p, &q, None).unwrap();
        assert!(!m.ratio().unwrap().clamped(), "ratio left its bounds");
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(1.0..9.0));
        let v = center(&Field::from_fn(grid.clone(), move |x| a * x[0] + (b * x[0]).cos()), &p).unwrap();
        let back = grad_op_inverse(&grad_op_apply(&v, &m).unwrap(), &m).unwrap();
        worst = worst.max(back.sub(&v).unwrap().norm2_p().unwrap().sqrt());
    }
    (worst < 1e-8, format!("50 triples, max L2(P) round-trip error {worst:.1e}"))
}

fn bundled_cases() -> Vec<(&'static str, Functional, Functional, GridDensity)> {
    let u = GridDensity::uniform(line(801)).unwrap();
    let b = GridDensity::beta(line(801), 2.0, 5.0).unwrap();
    let edu = sensan_core::education::education_model(101).unwrap();
    vec![
        ("uniform mean/median", Functional::mean(0), Functional::median(0), u.clone()),
        ("uniform variance/q75", Functional::variance(0), Functional::quantile(0.75, 0).unwrap(), u),
        ("normal mean/median", Functional::mean(0), Functional::median(0), std_normal()),
        ("beta mean/median", Functional::mean(0), Functional::median(0), b.clone()),
        ("beta variance/q30", Functional::variance(0), Functional::quantile(0.3, 0).unwrap(), b),
        (
            "3-cell pi1/pi2",
            Functional::moment("0.5*(x-2)*(x-3)").unwrap(),
            Functional::moment("-(x-1)*(x-3)").unwrap(),
            GridDensity::categorical(&[0.5, 0.3, 0.2]).unwrap(),
        ),
        ("education mean outcome/median education", edu.psi, edu.nu, edu.p),
    ]
}

fn report_gap(a: &SensitivityReport, b: &SensitivityReport) -> f64 {
    [
        (a.dpsi_dnu, b.dpsi_dnu),
        (a.S, b.S),
        (a.R, b.R),
        (a.grad_norm_psi, b.grad_norm_psi),
        (a.grad_norm_nu, b.grad_norm_nu),
        (a.dnu_dnu, b.dnu_dnu),
    ]
    .iter()
    .map(|(x, y)| (x - y).abs())
    .fold(0.0, f64::max)
}

fn metric_coincidence() -> Outcome {
    let cases = bundled_cases();
    let mut worst = 0.0f64;
    for (_, psi, nu, p) in &cases {
        let info = sensitivity(psi, nu, p, &PolicyMetric::Information).unwrap();
        let pol = sensitivity(psi, nu, p, &PolicyMetric::policy(p, p, None).unwrap()).unwrap();
        worst = worst.max(report_gap(&info, &pol));
    }
    (worst < 1e-8, format!("{} cases, max field difference {worst:.1e}", cases.len()))
}

/// Midpoint rule on `[lo, hi]`.
fn midpoint(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (hi - lo) / n as f64;
    (0..n).map(|i| f(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

fn closed_forms() -> Outcome {
    let (mean, median) = (Functional::mean(0), Functional::median(0));
    let su = sensitivity(&mean, &median, &GridDensity::uniform(line(801)).unwrap(), &PolicyMetric::Information).unwrap().S;
    // uniform: ψ̃ = x − 1/2, ν̃ = 1/2 − 1{x ≤ 1/2}
    let ou = midpoint(0.0, 1.0, 1 << 20, |x| (x - 0.5) * (0.5 - if x <= 0.5 { 1.0 } else { 0.0 }))
        / midpoint(0.0, 1.0, 1 << 20, |_| 0.25);
    let sn = sensitivity(&mean, &median, &std_normal(), &PolicyMetric::Information).unwrap().S;
    // truncated normal: ψ̃ = x, ν̃ = (1/2 − 1{x ≤ 0}) / f(0)
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    let z = midpoint(-6.0, 6.0, 1 << 20, phi);
    let f0 = phi(0.0) / z;
    let num = midpoint(-6.0, 6.0, 1 << 20, |x| x * (0.5 - if x <= 0.0 { 1.0 } else { 0.0 }) / f0 * phi(x) / z);
    let on = num / (0.25 / (f0 * f0));
    let pass = (su - 0.5).abs() < 1e-3
        && (su - ou).abs() < 1e-3
        && (sn - 2.0 / PI).abs() < 1e-3
        && (sn - on).abs() < 1e-3;
    (pass, format!("uniform S {su:.6} (oracle {ou:.6}), normal S {sn:.6} (oracle {on:.6}, 2/pi {:.6})", 2.0 / PI))
}

fn first_order() -> Outcome {
    let u = GridDensity::uniform(line(801)).unwrap();
    let b = GridDensity::beta(line(801), 2.0, 5.0).unwrap();
    let q = GridDensity::from_fn_shape(line(801), |x| 0.5 + x[0]).unwrap();
    let pol = PolicyMetric::policy(&b, &q, None).unwrap();
    let cases = [
        ("var/median info", Functional::variance(0), Functional::median(0), u.clone(), PolicyMetric::Information),
        ("q75/median info", Functional::quantile(0.75, 0).unwrap(), Functional::median(0), u, PolicyMetric::Information),
        ("var/median policy", Functional::variance(0), Functional::median(0), b.clone(), pol.clone()),
        ("median/q30 policy", Functional::median(0), Functional::quantile(0.3, 0).unwrap(), b, pol),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, psi, nu, p, m) in cases {
        let t = verify_first_order(&psi, &nu, &p, &m, &[1e-2, 5e-3, 2.5e-3]).unwrap();
        let (sn, sp) = (t.nu_slope.unwrap_or(f64::NAN), t.psi_slope.unwrap_or(f64::NAN));
        pass &= (sn - 2.0).abs() < 0.3 && (sp - 2.0).abs() < 0.3;
        detail.push(format!("{label} {sn:.2}/{sp:.2}"));
    }
    (pass, format!("slopes e_nu/e_psi: {}", detail.join(", ")))
}

fn influence_oracles() -> Outcome {
    let unit = line(801);
    let densities = [
        ("uniform", GridDensity::uniform(unit.clone()).unwrap()),
        ("beta", GridDensity::beta(unit, 2.0, 5.0).unwrap()),
        ("normal", std_normal()),
    ];
    let (mut smooth, mut median) = (0.0f64, 0.0f64);
    for (_, p) in &densities {
        let s = MollifierSchedule::for_grid(p.grid());
        let nodes = p.grid().axes()[0].nodes().to_vec();
        let gap = |f: &Functional, keep: &dyn Fn(f64) -> bool| {
            let num = influence_numerical(f, p, &s).unwrap().influence.node_values();
            let ana = influence_analytic(f, p).unwrap().node_values();
            nodes
                .iter()
                .zip(num.iter().zip(&ana))
                .filter(|(x, _)| keep(**x))
                .map(|(_, (a, b))| (a - b).abs())
                .fold(0.0, f64::max)
        };
        for f in [Functional::mean(0), Functional::variance(0)] {
            smooth = smooth.max(gap(&f, &|_| true));
        }
        let med = Functional::median(0);
        let m = med.eval(p).unwrap();
        median = median.max(gap(&med, &|x| (x - m).abs() > 2.0 * s.sigma0));
    }
    (smooth < 1e-2 && median < 5e-2, format!("sup error mean/variance {smooth:.1e}, median outside window {median:.1e}"))
}

fn gmm_normal(sd: f64) -> GridDensity {
    GridDensity::normal(Arc::new(Grid::line(1.0 - 10.0 * sd, 1.0 + 10.0 * sd, 2001).unwrap()), 1.0, sd).unwrap()
}

fn two_moments() -> MomentSpec {
    MomentSpec::parse(&["x - th0", "x^2 - th0^2 - 1"], 1, vec![(-5.0, 5.0)]).unwrap()
}

fn l2(a: &TangentVector, b: &TangentVector) -> f64 {
    a.sub(b).unwrap().norm2_p().unwrap().sqrt()
}

fn gmm_identities() -> Outcome {
    let p = gmm_normal(1.0);
    let spec = two_moments();
    let sol_i = gmm_solve(&p, &spec, &DMatrix::identity(2, 2)).unwrap();
    let psi_i = gmm_influence(&p, &spec, &sol_i).unwrap().remove(0);
    let sol_o = gmm_solve(&p, &spec, &sol_i.omega.clone().try_inverse().unwrap()).unwrap();
    let psi_o = gmm_influence(&p, &spec, &sol_o).unwrap().remove(0);
    let (vi, vo) = (psi_i.norm2_p().unwrap(), psi_o.norm2_p().unwrap());
    let proj = l2(&gmm_project_tangent(&p, &spec, &sol_i, &psi_i).unwrap(), &psi_o);
    let eff = gmm_efficient_influence(&p, &spec, &sol_i).unwrap().remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut orth = 0.0f64;
    for _ in 0..5 {
        let alpha = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        orth = orth.max(eff.dot_p(&gmm_out_direction(&p, &spec, &sol_i, &alpha).unwrap()).unwrap().abs());
    }
    let pass = (vi - 1.32).abs() < 1e-3 && (vo - 1.0).abs() < 1e-3 && proj < 1e-8 && orth < 1e-8;
    (pass, format!("var I2 {vi:.6}, var Omega^-1 {vo:.6}, |Pi0 psi_I - psi_opt| {proj:.1e}, max |<psi_opt, zeta>| {orth:.1e}"))
}

fn gmm_misspecified() -> Outcome {
    let p = gmm_normal(1.2);
    let spec = two_moments();
    let w = DMatrix::identity(2, 2);
    let sol = gmm_solve(&p, &spec, &w).unwrap();
    let psi = gmm_influence(&p, &spec, &sol).unwrap().remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ts = [1e-2, 5e-3, 2.5e-3];
    let mut slopes = Vec::new();
    for _ in 0..10 {
        let (b, c) = (rng.random_range(0.3..2.0), rng.random_range(0.0..6.28));
        let v = center(&Field::from_fn(p.grid().clone(), move |x| (b * x[0] + c).sin()), &p).unwrap();
        let d = psi.dot_p(&v).unwrap();
        let errs: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let st = gmm_solve(&counterfactual_density(&p, &v, t).unwrap(), &spec, &w).unwrap();
                (st.theta[0] - sol.theta[0] - t * d).abs()
            })
            .collect();
        slopes.push(loglog_slope(&ts, &errs).unwrap_or(f64::NAN));
    }
    let (lo, hi) = slopes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    (slopes.iter().all(|s| (s - 2.0).abs() < 0.3), format!("|Pg| {:.2e}, 10 directions, slopes in [{lo:.3}, {hi:.3}]", sol.pg.norm()))
}

fn joint_monte_carlo() -> Outcome {
    let r = mc_joint_asymptotics(&std_normal(), &Functional::mean(0), &Functional::median(0), 5000, 1000, 10).unwrap();
    let lambda = r.lambda_hat.unwrap();
    let p = GridDensity::categorical(&[0.5, 0.3, 0.2]).unwrap();
    let psi = Functional::moment("0.5*(x-2)*(x-3)").unwrap();
    let nu = Functional::moment("-(x-1)*(x-3)").unwrap();
    let m = mc_joint_asymptotics(&p, &psi, &nu, 5000, 1000, 11).unwrap();
    let cov = m.empirical_cov[0][0][1];
    let pass = (lambda - 2.0 / PI).abs() < 0.07 && (cov + 0.15).abs() < 0.02;
    (
        pass,
        format!(
            "normal Lambda_hat {lambda:.4} (2/pi {:.4}), Sigma_psinu {:.4}; multinomial Sigma_psinu {cov:.4} (-uv = -0.15)",
            2.0 / PI,
            r.empirical_cov[0][0][1]
        ),
    )
}

fn plugin_consistency() -> Outcome {
    let p = GridDensity::beta(line(401), 2.0, 5.0).unwrap();
    let q = GridDensity::from_fn_shape(line(401), |x| 0.5 + x[0]).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for metric in [McMetric::known(q.clone()), McMetric::kde(q)] {
        let label = metric.label();
        let cfg = McConfig {
            p: p.clone(),
            psi: Functional::mean(0),
            nu: Functional::median(0),
            metric,
            n_grid: vec![500, 2000, 8000],
            reps: 200,
            seed: 12,
        };
        let r = mc_consistency(&cfg).unwrap();
        let ratios = r.rmse_ratios();
        pass &= ratios.iter().all(|&x| x < 0.75);
        detail.push(format!("{label} rmse ratios {:.3}/{:.3}", ratios[0], ratios[1]));
    }
    (pass, detail.join(", "))
}

fn education() -> Outcome {
    let r = replicate_education(&EducationConfig::default()).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for row in &r.rows {
        let inc = row.report.achieved_increment();
        let gap = row.prediction_gap();
        pass &= (inc - 0.1).abs() < 0.01 && gap.abs() < 0.01;
        detail.push(format!("{} dnu {inc:.4} gap {gap:+.4}", row.label));
    }
    (pass, detail.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn() -> Outcome); 12] = [
        ("sphere sensitivity -uv", 1, sphere_lattice),
        ("coordinate gradient Riesz property", 1, riesz_property),
        ("gradient operator inverse pair", 5, grad_operator_round_trip),
        ("metric coincidence at Q = P", 5, metric_coincidence),
        ("closed forms S(mean, median)", 2, closed_forms),
        ("first-order counterfactual remainders", 10, first_order),
        ("numerical vs analytic influence", 60, influence_oracles),
        ("GMM identities at correct specification", 10, gmm_identities),
        ("GMM directional derivative under misspecification", 60, gmm_misspecified),
        ("Monte Carlo joint asymptotics", 300, joint_monte_carlo),
        ("plug-in consistency", 300, plugin_consistency),
        ("education reconstruction self-consistency", 30, education),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run));
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(o) => o,
            Err(e) => (false, format!("panicked: {}", e.downcast_ref::<String>().map_or("?", |s| s.as_str()))),
        };
        let in_time = took <= Duration::from_secs(*budget);
        let pass = ok && in_time;
        println!(
            "[{}] criterion {:>2}: {name} ({:.2} s, budget {budget} s{}): {detail}",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 12 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
