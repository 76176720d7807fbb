use std::path::Path;

use serde::Serialize;

use sensan_core::education::{education_marginal, policy_shapes, replicate_education, EducationConfig};
use sensan_core::estimation::{mc_consistency, mc_joint_asymptotics, McConfig, McMetric};
use sensan_core::functional::Functional;
use sensan_core::gmm::{gmm_efficient_influence, gmm_influence, gmm_solve, gmm_solve_optimal, weight_matrix, GmmSummary, MomentSpec};
use sensan_core::model_space::io::write_density_csv;
use sensan_core::model_space::{GridDensity, DEFAULT_CLAMP};
use sensan_core::sensitivity::{
    counterfactual_report, sensitivity_parts, verify_first_order, CounterfactualOptions, CounterfactualReport,
    FirstOrderTable, SensitivityReport,
};
use sensan_core::surface::{surface_report, Chart};
use sensan_core::tangent::TangentVector;

use crate::config::{self, at, functional, McFileConfig, McMode, MetricSpec, RatioMode};
use crate::output::{num, stem, Out};
use crate::plot::Series;
use crate::CliError;

pub struct Common<'a> {
    pub config: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub grid: Option<usize>,
}

fn require<'a>(c: &Common<'a>) -> Result<&'a Path, CliError> {
    c.config.ok_or_else(|| CliError::Config("--config is required for this command".into()))
}

fn nodes(p: &GridDensity) -> Vec<f64> {
    p.grid().axis(0).map(|a| a.nodes().to_vec()).unwrap_or_default()
}

fn is_line(p: &GridDensity) -> bool {
    p.grid().dim() == 1
}

#[derive(Serialize)]
struct Labeled<T: Serialize> {
    label: String,
    #[serde(flatten)]
    report: T,
}

#[derive(Serialize)]
struct SensitivityOutput {
    psi: String,
    nu: String,
    psi_value: f64,
    nu_value: f64,
    rows: Vec<Labeled<SensitivityReport>>,
}

fn write_tangent(out: &Out, name: &str, v: &TangentVector) -> Result<(), CliError> {
    Ok(v.write_csv(out.path(name))?)
}

struct Setup {
    p: GridDensity,
    psi: Functional,
    nu: Functional,
    metrics: Vec<(String, sensan_core::tangent::PolicyMetric)>,
}

fn setup(
    dist: &config::DistributionSpec,
    psi: &sensan_core::functional::FunctionalSpec,
    nu: &sensan_core::functional::FunctionalSpec,
    metrics: &[MetricSpec],
    grid: Option<usize>,
) -> Result<Setup, CliError> {
    let p = dist.build("distribution", grid)?;
    let psi = functional("psi", psi)?;
    let nu = functional("nu", nu)?;
    if metrics.is_empty() {
        return Err(CliError::Config("key `metrics`: at least one metric is required".into()));
    }
    let metrics = metrics
        .iter()
        .enumerate()
        .map(|(i, m)| Ok((m.label(i), m.build(&format!("metrics[{i}]"), &p)?)))
        .collect::<Result<_, CliError>>()?;
    Ok(Setup { p, psi, nu, metrics })
}

pub fn sensitivity(c: &Common) -> Result<(), CliError> {
    let cfg: config::SensitivityConfig = config::load(require(c)?)?;
    let s = setup(&cfg.distribution, &cfg.psi, &cfg.nu, &cfg.metrics, c.grid)?;
    let out = Out::create(c.out)?;
    write_density_csv(&s.p, out.path("curves/density.csv"))?;
    let xs = nodes(&s.p);
    let mut rows = Vec::new();
    let mut grads = Vec::new();
    for (i, (label, metric)) in s.metrics.iter().enumerate() {
        let parts = sensitivity_parts(&s.psi, &s.nu, &s.p, metric)?;
        parts.report.validate()?;
        if i == 0 {
            write_tangent(&out, "curves/influence_psi.csv", &parts.psi_influence)?;
            write_tangent(&out, "curves/influence_nu.csv", &parts.nu_influence)?;
            if is_line(&s.p) {
                let (a, b) = (parts.psi_influence.node_values(), parts.nu_influence.node_values());
                out.plot(
                    "plots/influence.svg",
                    "influence functions",
                    &[Series { label: &s.psi.name, x: &xs, y: &a }, Series { label: &s.nu.name, x: &xs, y: &b }],
                )?;
            }
        }
        write_tangent(&out, &format!("curves/gradient_nu_{i}_{}.csv", stem(label)), &parts.grad_nu)?;
        grads.push((label.clone(), parts.grad_nu.node_values()));
        println!("{label}: dpsi_dnu = {:.10} S = {:.10} R = {:.10}", parts.report.dpsi_dnu, parts.report.S, parts.report.R);
        rows.push(Labeled { label: label.clone(), report: parts.report });
    }
    if is_line(&s.p) {
        let dens = s.p.node_values();
        out.plot("plots/density.svg", "sampling density", &[Series { label: "P", x: &xs, y: &dens }])?;
        let series: Vec<Series> = grads.iter().map(|(l, g)| Series { label: l, x: &xs, y: g }).collect();
        out.plot("plots/gradients.svg", "gradients of nu", &series)?;
    }
    let mut header = vec!["label"];
    header.extend(SensitivityReport::CSV_HEADER);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.label.clone()];
            row.extend(r.report.csv_row());
            row
        })
        .collect();
    out.csv("table.csv", &header, &table)?;
    out.json(
        "report.json",
        &SensitivityOutput {
            psi: s.psi.name.clone(),
            nu: s.nu.name.clone(),
            psi_value: s.psi.eval(&s.p)?,
            nu_value: s.nu.eval(&s.p)?,
            rows,
        },
    )
}

#[derive(Serialize)]
struct CounterfactualRow {
    #[serde(flatten)]
    report: CounterfactualReport,
    achieved_increment: f64,
    /// Whether the increment gap of the first-order step is inside the declared tolerance.
    within_tolerance: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_order: Option<FirstOrderTable>,
}

pub fn counterfactual(c: &Common) -> Result<(), CliError> {
    let cfg: config::CounterfactualConfig = config::load(require(c)?)?;
    if !cfg.target_increment.is_finite() {
        return Err(CliError::Config("key `target_increment`: must be finite".into()));
    }
    let s = setup(&cfg.distribution, &cfg.psi, &cfg.nu, &cfg.metrics, c.grid)?;
    let options = CounterfactualOptions { refine: cfg.refine, path: cfg.path };
    let out = Out::create(c.out)?;
    write_density_csv(&s.p, out.path("curves/density.csv"))?;
    let xs = nodes(&s.p);
    let mut rows = Vec::new();
    let mut curves = vec![("baseline".to_string(), s.p.node_values())];
    for (i, (label, metric)) in s.metrics.iter().enumerate() {
        let r = counterfactual_report(&s.psi, &s.nu, &s.p, metric, cfg.target_increment, options)?;
        r.sensitivity.validate()?;
        write_density_csv(&r.counterfactual, out.path(&format!("curves/counterfactual_{i}_{}.csv", stem(label))))?;
        curves.push((label.clone(), r.counterfactual.node_values()));
        let first_order = if cfg.verify_steps.is_empty() {
            None
        } else {
            Some(at("verify_steps", verify_first_order(&s.psi, &s.nu, &s.p, metric, &cfg.verify_steps))?)
        };
        let gap = (r.achieved_increment() - cfg.target_increment).abs();
        println!(
            "{label}: h = {:.6} nu {:.6} -> {:.6} psi {:.6} -> {:.6} (first-order {:.6})",
            r.h, r.nu_before, r.nu_after, r.psi_before, r.psi_after, r.predicted_psi_after
        );
        rows.push(Labeled {
            label: label.clone(),
            report: CounterfactualRow {
                achieved_increment: r.achieved_increment(),
                within_tolerance: r.refined || gap <= r.tolerance,
                report: r,
                first_order,
            },
        });
    }
    if is_line(&s.p) {
        let series: Vec<Series> = curves.iter().map(|(l, y)| Series { label: l, x: &xs, y }).collect();
        out.plot("plots/counterfactual.svg", "counterfactual densities", &series)?;
    }
    let header = [
        "label", "h", "h_first_order", "refined", "target_increment", "nu_before", "nu_after", "psi_before", "psi_after",
        "predicted_psi_after", "tolerance", "S",
    ];
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|l| {
            let r = &l.report.report;
            vec![
                l.label.clone(),
                num(r.h),
                num(r.h_first_order),
                r.refined.to_string(),
                num(r.target_increment),
                num(r.nu_before),
                num(r.nu_after),
                num(r.psi_before),
                num(r.psi_after),
                num(r.predicted_psi_after),
                format!("{:e}", r.tolerance),
                num(r.sensitivity.S),
            ]
        })
        .collect();
    out.csv("table.csv", &header, &table)?;
    out.json("report.json", &rows)
}

#[derive(Serialize)]
struct GmmOutput {
    solution: GmmSummary,
    correctly_specified: bool,
    influence_covariance: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    efficient_covariance: Option<Vec<Vec<f64>>>,
}

fn gram(v: &[TangentVector]) -> sensan_core::Result<Vec<Vec<f64>>> {
    v.iter().map(|a| v.iter().map(|b| a.dot_p(b)).collect()).collect()
}

pub fn gmm(c: &Common) -> Result<(), CliError> {
    let cfg: config::GmmConfig = config::load(require(c)?)?;
    let p = cfg.distribution.build("distribution", c.grid)?;
    let spec = at("moments", MomentSpec::from_json(&cfg.moments))?;
    let w = at("weight", weight_matrix(&cfg.weight, spec.moment_dim()))?;
    let out = Out::create(c.out)?;
    let sol = match &w {
        Some(w) => gmm_solve(&p, &spec, w)?,
        None => gmm_solve_optimal(&p, &spec)?,
    };
    let infl = gmm_influence(&p, &spec, &sol)?;
    let efficient = if sol.is_correctly_specified() && spec.moment_dim() > spec.theta_dim {
        Some(gram(&gmm_efficient_influence(&p, &spec, &sol)?)?)
    } else {
        None
    };
    let cov = gram(&infl)?;
    let xs = nodes(&p);
    let mut curves = Vec::new();
    for (k, v) in infl.iter().enumerate() {
        write_tangent(&out, &format!("curves/influence_theta{k}.csv"), v)?;
        curves.push((format!("theta{k}"), v.node_values()));
    }
    if is_line(&p) {
        let series: Vec<Series> = curves.iter().map(|(l, y)| Series { label: l, x: &xs, y }).collect();
        out.plot("plots/influence.svg", "GMM influence functions", &series)?;
    }
    let table: Vec<Vec<String>> = sol
        .theta
        .iter()
        .enumerate()
        .map(|(k, t)| vec![format!("theta{k}"), num(*t), num(cov[k][k])])
        .collect();
    out.csv("table.csv", &["parameter", "estimate", "influence_variance"], &table)?;
    for (k, t) in sol.theta.iter().enumerate() {
        println!("theta{k} = {t:.10} (influence variance {:.10})", cov[k][k]);
    }
    out.json(
        "report.json",
        &GmmOutput {
            solution: sol.summary(),
            correctly_specified: sol.is_correctly_specified(),
            influence_covariance: cov,
            efficient_covariance: efficient,
        },
    )
}

pub struct SurfaceArgs<'a> {
    pub chart: Option<&'a str>,
    pub point: Option<[f64; 2]>,
    pub psi: Option<&'a str>,
    pub nu: Option<&'a str>,
    pub out: Option<&'a Path>,
}

pub fn surface(config: Option<&Path>, a: &SurfaceArgs) -> Result<(), CliError> {
    let file: Option<config::SurfaceConfig> = config.map(config::load).transpose()?;
    let pick = |flag: Option<&str>, from: Option<&str>, name: &str| -> Result<String, CliError> {
        flag.or(from)
            .map(str::to_string)
            .ok_or_else(|| CliError::Config(format!("--{name} (or key `{name}`) is required")))
    };
    let chart = pick(a.chart, file.as_ref().map(|f| f.chart.as_str()), "chart")?;
    let psi = pick(a.psi, file.as_ref().map(|f| f.psi.as_str()), "psi")?;
    let nu = pick(a.nu, file.as_ref().map(|f| f.nu.as_str()), "nu")?;
    let point = a
        .point
        .or(file.as_ref().map(|f| f.point))
        .ok_or_else(|| CliError::Config("--point (or key `point`) is required".into()))?;
    let chart: Chart = at("chart", chart.parse())?;
    at("psi", sensan_core::surface::CoordFunctional::parse(&psi))?;
    at("nu", sensan_core::surface::CoordFunctional::parse(&nu))?;
    let report = surface_report(&chart, &psi, &nu, point)?;
    println!("{:.10}", report.dpsi_dnu);
    if let Some(dir) = a.out {
        Out::create(dir)?.json("report.json", &report)?;
    }
    Ok(())
}

pub fn mc(c: &Common) -> Result<(), CliError> {
    let cfg: McFileConfig = config::load(require(c)?)?;
    let p = cfg.distribution.build("distribution", c.grid)?;
    let psi = functional("psi", &cfg.psi)?;
    let nu = functional("nu", &cfg.nu)?;
    let seed = c.seed.unwrap_or(cfg.seed);
    if cfg.reps == 0 {
        return Err(CliError::Config("key `reps`: must be positive".into()));
    }
    let result = match cfg.mode {
        McMode::Consistency => {
            if cfg.n_grid.len() < 3 || cfg.n_grid.windows(2).any(|w| w[1] <= w[0]) || cfg.n_grid[0] < 2 {
                return Err(CliError::Config("key `n_grid`: need at least 3 increasing sample sizes (each >= 2)".into()));
            }
            let metric = match &cfg.metric {
                MetricSpec::Information => McMetric::Information,
                MetricSpec::Policy { q, clamp, .. } => {
                    let q = q.build_on("metric.q", p.grid())?;
                    let clamp = clamp.unwrap_or(DEFAULT_CLAMP);
                    match cfg.ratio {
                        RatioMode::Known => McMetric::KnownPolicy { q, clamp },
                        RatioMode::Kde => McMetric::KdePolicy { q, bandwidth: None, clamp },
                    }
                }
            };
            let mc = McConfig { p, psi, nu, metric, n_grid: cfg.n_grid.clone(), reps: cfg.reps, seed };
            mc_consistency(&mc)?
        }
        McMode::Joint => {
            let n = cfg.n.ok_or_else(|| CliError::Config("key `n`: required for joint mode".into()))?;
            mc_joint_asymptotics(&p, &psi, &nu, n, cfg.reps, seed)?
        }
    };
    let out = Out::create(c.out)?;
    result.write_csv(out.path("table.csv"))?;
    result.write_summary(out.path("report.json"))?;
    println!("rmse {:?}", result.rmse);
    if let (Some(l), Some(d)) = (result.lambda_hat, result.delta_hat) {
        println!("Lambda_hat = {l:.6} Delta_hat = {d:.6} cov = {:?}", result.empirical_cov[0]);
    }
    Ok(())
}

#[derive(Serialize)]
struct EducationOutput<'a> {
    note: &'static str,
    config: &'a EducationConfig,
    psi: f64,
    nu: f64,
    rows: Vec<EducationRowOut>,
}

#[derive(Serialize)]
struct EducationRowOut {
    label: String,
    #[serde(rename = "S")]
    s: f64,
    prediction_gap: f64,
    report: CounterfactualReport,
}

const EDUCATION_NOTE: &str = "Reconstruction: education marginal Beta(2,2) and policy densities \
Q1 ~ 0.3 + 2.8(x - 0.5)^2, Q2 ~ 1.6 - 1.2x, Q3 uniform are our own choices; \
the original example shows these only as plots, so its table values are not reproduced.";

pub fn replicate(c: &Common) -> Result<(), CliError> {
    let mut cfg: EducationConfig = match c.config {
        Some(path) => config::load(path)?,
        None => EducationConfig::default(),
    };
    if let Some(g) = c.grid {
        cfg.grid = g;
    }
    if cfg.grid < 5 {
        return Err(CliError::Config(format!("key `grid`: need at least 5 nodes, got {}", cfg.grid)));
    }
    let result = replicate_education(&cfg)?;
    let out = Out::create(c.out)?;
    let p = &result.model.p;
    let xs = nodes(p);
    let stems = ["information", "q1", "q2", "q3"];

    let marginal = |d: &GridDensity| -> sensan_core::Result<Vec<f64>> { xs.iter().map(|&x| d.marginal_density_at(0, x)).collect() };
    let pdf = marginal(p)?;
    let exact: Vec<f64> = xs.iter().map(|&x| education_marginal(x)).collect();
    out.columns("curves/sampling_pdf.csv", &[("x", &xs), ("density", &pdf)])?;
    out.plot("plots/sampling_pdf.svg", "education density", &[Series { label: "P_X", x: &xs, y: &exact }])?;

    let qs: Vec<Vec<f64>> = policy_shapes()
        .iter()
        .map(|q| {
            let z: f64 = (0..2000).map(|i| q((i as f64 + 0.5) / 2000.0)).sum::<f64>() / 2000.0;
            xs.iter().map(|&x| q(x) / z).collect()
        })
        .collect();
    out.columns("curves/policy_densities.csv", &[("x", &xs), ("q1", &qs[0]), ("q2", &qs[1]), ("q3", &qs[2])])?;
    out.plot(
        "plots/policy_densities.svg",
        "policy densities",
        &[
            Series { label: "P_X", x: &xs, y: &exact },
            Series { label: "Q1", x: &xs, y: &qs[0] },
            Series { label: "Q2", x: &xs, y: &qs[1] },
            Series { label: "Q3", x: &xs, y: &qs[2] },
        ],
    )?;

    let at_x = |v: &TangentVector| -> sensan_core::Result<Vec<f64>> { xs.iter().map(|&x| v.eval(&[x, 0.5])).collect() };
    let mut grads = Vec::new();
    let mut cfs = Vec::new();
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for (row, st) in result.rows.iter().zip(stems) {
        let r = &row.report;
        r.sensitivity.validate()?;
        let g = r.grad_nu.as_ref().map(at_x).transpose()?.unwrap_or_default();
        if st == "information" {
            out.columns("curves/influence_nu.csv", &[("x", &xs), ("influence", &g)])?;
            out.plot("plots/influence.svg", "influence function of median education", &[Series { label: "nu~", x: &xs, y: &g }])?;
        }
        grads.push(g);
        cfs.push(marginal(&r.counterfactual)?);
        table.push(vec![
            row.label.clone(),
            num(r.sensitivity.S),
            num(r.sensitivity.dpsi_dnu),
            num(r.sensitivity.R),
            num(r.sensitivity.Lambda),
            num(r.sensitivity.Delta),
            num(r.h),
            num(r.h_first_order),
            num(r.nu_before),
            num(r.nu_after),
            num(r.psi_before),
            num(r.psi_after),
            num(r.predicted_psi_after),
            num(row.prediction_gap()),
        ]);
        println!(
            "{}: S = {:.6} median {:.4} -> {:.4} mean {:.6} -> {:.6} (first-order {:.6})",
            row.label, r.sensitivity.S, r.nu_before, r.nu_after, r.psi_before, r.psi_after, r.predicted_psi_after
        );
        rows.push(EducationRowOut { label: row.label.clone(), s: r.sensitivity.S, prediction_gap: row.prediction_gap(), report: r.clone() });
    }
    let labels: Vec<&str> = result.rows.iter().map(|r| r.label.as_str()).collect();
    let mut gcols: Vec<(&str, &[f64])> = vec![("x", &xs)];
    gcols.extend(stems.iter().zip(&grads).map(|(s, g)| (*s, g.as_slice())));
    out.columns("curves/policy_gradients.csv", &gcols)?;
    let series: Vec<Series> = labels.iter().zip(&grads).map(|(l, g)| Series { label: l, x: &xs, y: g }).collect();
    out.plot("plots/policy_gradients.svg", "gradients of median education", &series)?;

    let mut ccols: Vec<(&str, &[f64])> = vec![("x", &xs), ("baseline", &pdf)];
    ccols.extend(stems.iter().zip(&cfs).map(|(s, g)| (*s, g.as_slice())));
    out.columns("curves/counterfactual_pdfs.csv", &ccols)?;
    let mut series = vec![Series { label: "baseline", x: &xs, y: &pdf }];
    series.extend(labels.iter().zip(&cfs).map(|(l, g)| Series { label: l, x: &xs, y: g }));
    out.plot("plots/counterfactual_pdfs.svg", "counterfactual education densities", &series)?;

    out.csv(
        "table.csv",
        &[
            "metric", "S", "dpsi_dnu", "R", "Lambda", "Delta", "h", "h_first_order", "nu_before", "nu_after", "psi_before",
            "psi_after", "predicted_psi_after", "prediction_gap",
        ],
        &table,
    )?;
    out.json(
        "report.json",
        &EducationOutput {
            note: EDUCATION_NOTE,
            config: &cfg,
            psi: result.model.psi.eval(p)?,
            nu: result.model.nu.eval(p)?,
            rows,
        },
    )
}
