//! Plug-in sensitivity estimators from finite samples and the Monte Carlo harness that
//! checks their consistency and the joint asymptotics of efficient estimators.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::{Functional, FunctionalKind};
use crate::model_space::{kde_at, kde_fit, likelihood_ratio, silverman_bandwidth, DensitySampler, GridDensity, LikelihoodRatio, Sample, DEFAULT_CLAMP};
use crate::sensitivity::sensitivity;
use crate::tangent::PolicyMetric;

pub type InfluenceFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

#[derive(Debug, Clone)]
pub enum RatioEstimator {
    /// `r̂ ≡ 1`.
    Information,
    Known(LikelihoodRatio),
    /// `r̂ = p̂ / q` with `p̂` a reflected-kernel estimate on the grid of `q`.
    KdeEstimated { q: GridDensity, bandwidth: Option<f64>, clamp: (f64, f64) },
}

#[derive(Clone)]
pub struct PluginConfig {
    pub psi_influence: InfluenceFn,
    pub nu_influence: InfluenceFn,
    pub ratio: RatioEstimator,
    pub sample: Sample,
}

/// Estimated influence function of `f` with parameters fitted on `sample`.
pub fn estimated_influence(f: &Functional, sample: &Sample) -> Result<InfluenceFn> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let check_axis = |axis: usize| {
        if axis >= sample.dim() {
            Err(Error::InvalidAxis { axis, dim: sample.dim() })
        } else {
            Ok(())
        }
    };
    Ok(match &f.kind {
        FunctionalKind::Moment(rho) => {
            if rho.theta_dim() > 0 || rho.coord_dim() > sample.dim() {
                return Err(Error::InvalidArgument(format!("moment '{rho}' does not fit a {}-D sample", sample.dim())));
            }
            let m = sample.points().iter().map(|p| rho.eval(*p, &[])).sum::<f64>() / sample.len() as f64;
            let rho = rho.clone();
            Arc::new(move |x| rho.eval(x, &[]) - m)
        }
        &FunctionalKind::Variance { axis } => {
            check_axis(axis)?;
            let (m, v) = (sample.mean(axis), sample.variance(axis));
            Arc::new(move |x| (x[axis] - m).powi(2) - v)
        }
        &FunctionalKind::Quantile { tau, axis } => {
            let q = sample.quantile(tau, axis)?;
            let dens = kde_at(sample, axis, q, silverman_bandwidth(sample, axis)?);
            if !(dens > 0.0) {
                return Err(Error::QuantileInfluenceUnstable { at: q, density: dens });
            }
            Arc::new(move |x| (tau - if x[axis] <= q { 1.0 } else { 0.0 }) / dens)
        }
        FunctionalKind::Composite(_) => return Err(Error::NoAnalyticInfluence(f.name.clone())),
    })
}

/// Efficient plug-in estimate of `f`: sample moment, biased sample variance or empirical quantile.
pub fn plugin_estimate(f: &Functional, sample: &Sample) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    match &f.kind {
        FunctionalKind::Moment(rho) => {
            Ok(sample.points().iter().map(|p| rho.eval(*p, &[])).sum::<f64>() / sample.len() as f64)
        }
        &FunctionalKind::Variance { axis } => Ok(sample.variance(axis)),
        &FunctionalKind::Quantile { tau, axis } => sample.quantile(tau, axis),
        FunctionalKind::Composite(_) => Err(Error::NoAnalyticInfluence(f.name.clone())),
    }
}

impl PluginConfig {
    pub fn new(psi: &Functional, nu: &Functional, ratio: RatioEstimator, sample: Sample) -> Result<Self> {
        Ok(Self {
            psi_influence: estimated_influence(psi, &sample)?,
            nu_influence: estimated_influence(nu, &sample)?,
            ratio,
            sample,
        })
    }

    fn ratio_values(&self) -> Result<Vec<f64>> {
        let pts = self.sample.points();
        match &self.ratio {
            RatioEstimator::Information => Ok(vec![1.0; pts.len()]),
            RatioEstimator::Known(r) => pts.iter().map(|p| r.at(&p[..self.sample.dim()])).collect(),
            RatioEstimator::KdeEstimated { q, bandwidth, clamp } => {
                let bw = bandwidth.map(|b| vec![b; self.sample.dim()]);
                let p_hat = kde_fit(&self.sample, q.grid().clone(), bw.as_deref())?;
                let r = likelihood_ratio(&p_hat, q, Some(*clamp))?;
                pts.iter().map(|p| r.at(&p[..self.sample.dim()])).collect()
            }
        }
    }
}

/// `ℙₙ{ψ̃ [ν̃ − ℙₙ(ν̃ r̂)/ℙₙ r̂] r̂}`.
pub fn plugin_sensitivity(config: &PluginConfig) -> Result<f64> {
    let pts = config.sample.points();
    if pts.is_empty() {
        return Err(Error::EmptySample);
    }
    let r = config.ratio_values()?;
    let mut a = Vec::with_capacity(pts.len());
    let mut b = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let (u, v) = ((config.psi_influence)(*p), (config.nu_influence)(*p));
        if !(u.is_finite() && v.is_finite() && r[i].is_finite()) {
            return Err(Error::NonFiniteInfluence { index: i, point: p[..config.sample.dim()].to_vec() });
        }
        a.push(u);
        b.push(v);
    }
    let n = pts.len() as f64;
    let mean_r = r.iter().sum::<f64>() / n;
    let mean_vr = b.iter().zip(&r).map(|(v, r)| v * r).sum::<f64>() / n;
    let c = mean_vr / mean_r;
    Ok(a.iter().zip(&b).zip(&r).map(|((u, v), r)| u * (v - c) * r).sum::<f64>() / n)
}

/// Metric of a Monte Carlo consistency run; the policy variants fix `Q` and either use the
/// exact ratio or re-estimate it from each sample.
#[derive(Debug, Clone)]
pub enum McMetric {
    Information,
    KnownPolicy { q: GridDensity, clamp: (f64, f64) },
    KdePolicy { q: GridDensity, bandwidth: Option<f64>, clamp: (f64, f64) },
}

impl McMetric {
    pub fn known(q: GridDensity) -> Self {
        McMetric::KnownPolicy { q, clamp: DEFAULT_CLAMP }
    }

    pub fn kde(q: GridDensity) -> Self {
        McMetric::KdePolicy { q, bandwidth: None, clamp: DEFAULT_CLAMP }
    }

    pub fn label(&self) -> &'static str {
        match self {
            McMetric::Information => "information",
            McMetric::KnownPolicy { .. } => "policy_known",
            McMetric::KdePolicy { .. } => "policy_kde",
        }
    }

    fn population_metric(&self, p: &GridDensity) -> Result<PolicyMetric> {
        match self {
            McMetric::Information => Ok(PolicyMetric::Information),
            McMetric::KnownPolicy { q, clamp } | McMetric::KdePolicy { q, clamp, .. } => {
                PolicyMetric::policy(p, q, Some(*clamp))
            }
        }
    }

    fn estimator(&self, p: &GridDensity) -> Result<RatioEstimator> {
        Ok(match self {
            McMetric::Information => RatioEstimator::Information,
            McMetric::KnownPolicy { q, clamp } => RatioEstimator::Known(likelihood_ratio(p, q, Some(*clamp))?),
            McMetric::KdePolicy { q, bandwidth, clamp } => {
                RatioEstimator::KdeEstimated { q: q.clone(), bandwidth: *bandwidth, clamp: *clamp }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub p: GridDensity,
    pub psi: Functional,
    pub nu: Functional,
    pub metric: McMetric,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub n: usize,
    pub rep: usize,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_estimate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McResult {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    /// Target of `estimate`: the population sensitivity, or `ψ(P)` for joint runs.
    pub population: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population_nu: Option<f64>,
    #[serde(skip)]
    pub estimates: Vec<McEstimate>,
    pub rmse: Vec<f64>,
    /// Per-n covariance of `√n(ψ̂ − ψ, ν̂ − ν)`; empty for consistency runs.
    pub empirical_cov: Vec<[[f64; 2]; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_hat: Option<f64>,
}

impl McResult {
    pub fn estimates_at(&self, n: usize) -> Vec<f64> {
        self.estimates.iter().filter(|e| e.n == n).map(|e| e.estimate).collect()
    }

    /// Successive `RMSE(n_{k+1}) / RMSE(n_k)`.
    pub fn rmse_ratios(&self) -> Vec<f64> {
        self.rmse.windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let joint = self.estimates.iter().any(|e| e.nu_estimate.is_some());
        if joint {
            w.write_record(["n", "rep", "estimate", "nu_estimate"])?;
        } else {
            w.write_record(["n", "rep", "estimate"])?;
        }
        for e in &self.estimates {
            let mut rec = vec![e.n.to_string(), e.rep.to_string(), format!("{:.17e}", e.estimate)];
            if let Some(v) = e.nu_estimate {
                rec.push(format!("{v:.17e}"));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Independent stream for replication `rep` at sample size `n`.
pub fn replication_rng(seed: u64, n: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) ^ rep as u64);
    rng
}

fn check_grid(n_grid: &[usize], reps: usize, min_points: usize) -> Result<()> {
    if n_grid.len() < min_points {
        return Err(Error::InvalidArgument(format!("need at least {min_points} sample sizes, got {}", n_grid.len())));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) || n_grid[0] < 2 {
        return Err(Error::InvalidArgument(format!("sample sizes must be increasing and at least 2: {n_grid:?}")));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    Ok(())
}

fn rmse(xs: &[f64], target: f64) -> f64 {
    (xs.iter().map(|x| (x - target).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Runs `job(n, rep, rng)` over the replication lattice in parallel, in lattice order.
fn replicate<T: Send>(
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    job: impl Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
) -> Result<Vec<(usize, usize, T)>> {
    let cells: Vec<(usize, usize)> = n_grid.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
    cells
        .into_par_iter()
        .map(|(n, rep)| {
            let mut rng = replication_rng(seed, n, rep);
            job(n, &mut rng).map(|t| (n, rep, t))
        })
        .collect()
}

/// Plug-in sensitivity estimates across sample sizes and their RMSE against the population value.
pub fn mc_consistency(config: &McConfig) -> Result<McResult> {
    check_grid(&config.n_grid, config.reps, 3)?;
    let population = sensitivity(&config.psi, &config.nu, &config.p, &config.metric.population_metric(&config.p)?)?.dpsi_dnu;
    let sampler = DensitySampler::new(&config.p)?;
    let estimator = config.metric.estimator(&config.p)?;
    let runs = replicate(&config.n_grid, config.reps, config.seed, |n, rng| {
        let sample = sampler.sample(n, rng)?;
        plugin_sensitivity(&PluginConfig::new(&config.psi, &config.nu, estimator.clone(), sample)?)
    })?;
    let estimates: Vec<McEstimate> =
        runs.into_iter().map(|(n, rep, estimate)| McEstimate { n, rep, estimate, nu_estimate: None }).collect();
    let rmse = config
        .n_grid
        .iter()
        .map(|&n| rmse(&estimates.iter().filter(|e| e.n == n).map(|e| e.estimate).collect::<Vec<_>>(), population))
        .collect();
    Ok(McResult {
        n_grid: config.n_grid.clone(),
        reps: config.reps,
        seed: config.seed,
        population,
        population_nu: None,
        estimates,
        rmse,
        empirical_cov: Vec::new(),
        lambda_hat: None,
        delta_hat: None,
    })
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// Replicated efficient estimates `(ψ̂ₙ, ν̂ₙ)` and the covariance of their `√n`-scaled errors.
pub fn mc_joint_asymptotics(
    p: &GridDensity,
    psi: &Functional,
    nu: &Functional,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<McResult> {
    check_grid(&[n], reps, 1)?;
    if reps < 2 {
        return Err(Error::InvalidArgument("covariance needs at least 2 replications".into()));
    }
    let (psi0, nu0) = (psi.eval(p)?, nu.eval(p)?);
    let sampler = DensitySampler::new(p)?;
    let runs = replicate(&[n], reps, seed, |n, rng| {
        let sample = sampler.sample(n, rng)?;
        Ok((plugin_estimate(psi, &sample)?, plugin_estimate(nu, &sample)?))
    })?;
    let sn = (n as f64).sqrt();
    let ea: Vec<f64> = runs.iter().map(|(_, _, (a, _))| sn * (a - psi0)).collect();
    let eb: Vec<f64> = runs.iter().map(|(_, _, (_, b))| sn * (b - nu0)).collect();
    let (saa, sab, sbb) = (covariance(&ea, &ea), covariance(&ea, &eb), covariance(&eb, &eb));
    let psi_hats: Vec<f64> = runs.iter().map(|(_, _, (a, _))| *a).collect();
    let estimates = runs
        .into_iter()
        .map(|(n, rep, (a, b))| McEstimate { n, rep, estimate: a, nu_estimate: Some(b) })
        .collect();
    Ok(McResult {
        n_grid: vec![n],
        reps,
        seed,
        population: psi0,
        population_nu: Some(nu0),
        estimates,
        rmse: vec![rmse(&psi_hats, psi0)],
        empirical_cov: vec![[[saa, sab], [sab, sbb]]],
        lambda_hat: Some(sab / sbb),
        delta_hat: Some(sab * sab / (saa * sbb)),
    })
}
