use std::f64::consts::PI;
use std::sync::Arc;

use sensan_core::estimation::{
    mc_consistency, mc_joint_asymptotics, plugin_sensitivity, replication_rng, McConfig, McMetric, PluginConfig,
    RatioEstimator,
};
use sensan_core::functional::Functional;
use sensan_core::grid::Grid;
use sensan_core::model_space::{DensitySampler, GridDensity};

fn unit(n: usize) -> Arc<Grid> {
    Arc::new(Grid::line(0.0, 1.0, n).unwrap())
}

#[test]
fn uniform_mean_median_plugin() {
    let p = GridDensity::uniform(unit(201)).unwrap();
    let s = DensitySampler::new(&p).unwrap().sample(100_000, &mut replication_rng(1, 100_000, 0)).unwrap();
    let cfg = PluginConfig::new(&Functional::mean(0), &Functional::median(0), RatioEstimator::Information, s).unwrap();
    let v = plugin_sensitivity(&cfg).unwrap();
    assert!((v - 0.125).abs() < 0.01, "{v}");
}

#[test]
fn joint_asymptotics_normal_mean_median() {
    let p = GridDensity::normal(Arc::new(Grid::line(-6.0, 6.0, 801).unwrap()), 0.0, 1.0).unwrap();
    let r = mc_joint_asymptotics(&p, &Functional::mean(0), &Functional::median(0), 5000, 1000, 7).unwrap();
    let c = r.empirical_cov[0];
    assert!((c[0][1] - 1.0).abs() < 0.1, "{c:?}");
    assert!((r.lambda_hat.unwrap() - 2.0 / PI).abs() < 0.07, "{:?}", r.lambda_hat);
}

#[test]
fn joint_asymptotics_same_functional() {
    let p = GridDensity::beta(unit(401), 2.0, 5.0).unwrap();
    let m = Functional::mean(0);
    let r = mc_joint_asymptotics(&p, &m, &m, 500, 200, 3).unwrap();
    assert!((r.lambda_hat.unwrap() - 1.0).abs() < 0.05);
    assert!((r.delta_hat.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn multinomial_covariance_is_minus_uv() {
    let p = GridDensity::categorical(&[0.5, 0.3, 0.2]).unwrap();
    let psi = Functional::moment("0.5*(x-2)*(x-3)").unwrap();
    let nu = Functional::moment("-(x-1)*(x-3)").unwrap();
    let r = mc_joint_asymptotics(&p, &psi, &nu, 5000, 1000, 13).unwrap();
    let c = r.empirical_cov[0][0][1];
    assert!((c + 0.15).abs() < 0.02, "{c}");
}

fn consistency(metric: McMetric) -> Vec<f64> {
    let p = GridDensity::beta(unit(401), 2.0, 5.0).unwrap();
    let cfg = McConfig {
        p,
        psi: Functional::mean(0),
        nu: Functional::median(0),
        metric,
        n_grid: vec![500, 2000, 8000],
        reps: 200,
        seed: 2024,
    };
    let r = mc_consistency(&cfg).unwrap();
    eprintln!("{}: rmse {:?} ratios {:?}", cfg.metric.label(), r.rmse, r.rmse_ratios());
    r.rmse_ratios()
}

fn tilted_q() -> GridDensity {
    GridDensity::from_fn_shape(unit(401), |x| 0.5 + x[0]).unwrap()
}

#[test]
fn plugin_is_root_n_consistent() {
    for metric in [McMetric::Information, McMetric::known(tilted_q()), McMetric::kde(tilted_q())] {
        for r in consistency(metric) {
            assert!(r < 0.75, "{r}");
        }
    }
}
