//! Reconstruction of the schooling example: years of education `X` on `[0, 1]`, an outcome
//! `Y | X ~ Beta(2, 5 − 5X)` with `E[Y | X] = 2 / (7 − 5X)`, the sensitivity of mean outcome
//! to median education under four metrics, and counterfactuals raising the median by a fixed step.
//!
//! The education marginal and the three policy densities are our own choices, since the
//! original ones are only available as plots.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::functional::Functional;
use crate::grid::Grid;
use crate::model_space::{GridDensity, DEFAULT_CLAMP};
use crate::sensitivity::{counterfactual_report, CounterfactualOptions, CounterfactualReport};
use crate::tangent::PolicyMetric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EducationConfig {
    /// Nodes per axis of the `[0, 1]²` grid.
    pub grid: usize,
    pub target_increment: f64,
    /// Solve for the exact step instead of using the first-order rule.
    pub refine: bool,
    pub clamp: (f64, f64),
}

impl Default for EducationConfig {
    fn default() -> Self {
        Self { grid: 201, target_increment: 0.1, refine: true, clamp: DEFAULT_CLAMP }
    }
}

pub const METRIC_LABELS: [&str; 4] = ["L²(P_X)", "L²(Q₁)", "L²(Q₂)", "L²(Q₃)"];

/// Education density `6x(1 − x)`.
pub fn education_marginal(x: f64) -> f64 {
    6.0 * x * (1.0 - x)
}

/// Unnormalized policy densities on education: costly extremes, a tilt against high
/// education, and the flat policy.
pub fn policy_shapes() -> [fn(f64) -> f64; 3] {
    [|x| 0.3 + 2.8 * (x - 0.5).powi(2), |x| 1.6 - 1.2 * x, |_| 1.0]
}

pub fn conditional_mean(x: f64) -> f64 {
    2.0 / (7.0 - 5.0 * x)
}

/// Conditional outcome density at every `y` node, as cell averages of Beta CDF differences
/// renormalized under the axis quadrature. At `x = 1` the law is a point mass at `y = 1`.
fn conditional_row(grid: &Grid, x: f64) -> Result<Vec<f64>> {
    let ay = grid.axis(1)?;
    let (ys, w) = (ay.nodes(), ay.weights());
    let b = 5.0 - 5.0 * x;
    let mut row = vec![0.0; ys.len()];
    if b <= 1e-12 {
        let last = ys.len() - 1;
        row[last] = 1.0 / w[last];
        return Ok(row);
    }
    let dist = Beta::new(2.0, b).map_err(|e| Error::InvalidArgument(format!("beta(2, {b}): {e}")))?;
    let half = 0.5 * ay.step();
    for (j, &y) in ys.iter().enumerate() {
        let (lo, hi) = ((y - half).max(0.0), (y + half).min(1.0));
        row[j] = (dist.cdf(hi) - dist.cdf(lo)) / (hi - lo);
    }
    let mass: f64 = row.iter().zip(w).map(|(r, w)| r * w).sum();
    row.iter_mut().for_each(|r| *r /= mass);
    Ok(row)
}

fn joint(grid: &Arc<Grid>, marginal: impl Fn(f64) -> f64) -> Result<GridDensity> {
    let xs = grid.axis(0)?.nodes().to_vec();
    let ny = grid.axis(1)?.len();
    let mut values = Vec::with_capacity(xs.len() * ny);
    for &x in &xs {
        let m = marginal(x);
        values.extend(conditional_row(grid, x)?.into_iter().map(|c| m * c));
    }
    GridDensity::from_shape(Field::from_values(grid.clone(), values)?)
}

#[derive(Debug, Clone)]
pub struct EducationModel {
    pub p: GridDensity,
    /// Policy densities sharing the outcome law of `p`, so `dP/dQ` depends on education only.
    pub policies: Vec<GridDensity>,
    pub psi: Functional,
    pub nu: Functional,
}

pub fn education_model(n: usize) -> Result<EducationModel> {
    let grid = Arc::new(Grid::rect((0.0, 1.0), (0.0, 1.0), n, n)?);
    let p = joint(&grid, education_marginal)?;
    let policies = policy_shapes().iter().map(|q| joint(&grid, q)).collect::<Result<_>>()?;
    Ok(EducationModel {
        p,
        policies,
        psi: Functional::mean(1).with_name("mean outcome"),
        nu: Functional::median(0).with_name("median education"),
    })
}

impl EducationModel {
    pub fn metrics(&self, clamp: (f64, f64)) -> Result<Vec<PolicyMetric>> {
        let mut out = vec![PolicyMetric::Information];
        for q in &self.policies {
            out.push(PolicyMetric::policy(&self.p, q, Some(clamp))?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EducationRow {
    pub label: String,
    pub report: CounterfactualReport,
}

impl EducationRow {
    /// `ψ(P_h) − ψ(P) − S Δ`, the gap of the first-order prediction.
    pub fn prediction_gap(&self) -> f64 {
        self.report.psi_change() - self.report.sensitivity.S * self.report.target_increment
    }
}

#[derive(Debug, Clone)]
pub struct EducationResult {
    pub model: EducationModel,
    pub rows: Vec<EducationRow>,
}

pub fn replicate_education(config: &EducationConfig) -> Result<EducationResult> {
    if config.grid < 5 {
        return Err(Error::InvalidArgument(format!("grid must have at least 5 nodes per axis, got {}", config.grid)));
    }
    let model = education_model(config.grid)?;
    let options = CounterfactualOptions { refine: config.refine, ..Default::default() };
    let rows = model
        .metrics(config.clamp)?
        .iter()
        .zip(METRIC_LABELS)
        .map(|(m, label)| {
            let report = counterfactual_report(&model.psi, &model.nu, &model.p, m, config.target_increment, options)?;
            Ok(EducationRow { label: label.to_string(), report })
        })
        .collect::<Result<_>>()?;
    Ok(EducationResult { model, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_mean_matches_conditional_mean() {
        let m = education_model(101).unwrap();
        // E[Y] = ∫ 2/(7 − 5x) · 6x(1 − x) dx
        let n = 200_000;
        let oracle: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                conditional_mean(x) * education_marginal(x)
            })
            .sum::<f64>()
            / n as f64;
        let psi = m.psi.eval(&m.p).unwrap();
        assert!((psi - oracle).abs() < 2e-3, "{psi} vs {oracle}");
        assert!((m.nu.eval(&m.p).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn zero_target_leaves_everything_unchanged() {
        let r = replicate_education(&EducationConfig { grid: 51, target_increment: 0.0, ..Default::default() }).unwrap();
        for row in &r.rows {
            assert_eq!(row.report.psi_after, row.report.psi_before);
            assert_eq!(row.report.nu_after, row.report.nu_before);
        }
    }
}
