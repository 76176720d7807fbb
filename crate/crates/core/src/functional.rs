//! Statistical functionals, their closed-form influence functions, and the
//! mollified-mixture limit that defines influence functions numerically.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::Field;
use crate::grid::{Grid, Rule};
use crate::model_space::GridDensity;
use crate::tangent::{center, TangentVector};

pub type CompositeFn = Arc<dyn Fn(&GridDensity) -> Result<f64> + Send + Sync>;

#[derive(Clone)]
pub enum FunctionalKind {
    Moment(Expr),
    Variance { axis: usize },
    Quantile { tau: f64, axis: usize },
    Composite(CompositeFn),
}

impl fmt::Debug for FunctionalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalKind::Moment(e) => write!(f, "Moment({e})"),
            FunctionalKind::Variance { axis } => write!(f, "Variance {{ axis: {axis} }}"),
            FunctionalKind::Quantile { tau, axis } => write!(f, "Quantile {{ tau: {tau}, axis: {axis} }}"),
            FunctionalKind::Composite(_) => write!(f, "Composite"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Functional {
    pub kind: FunctionalKind,
    pub name: String,
}

const AXES: [&str; 2] = ["x", "y"];

impl Functional {
    pub fn mean(axis: usize) -> Self {
        Self {
            kind: FunctionalKind::Moment(Expr::parse(AXES[axis.min(1)]).expect("coordinate parses")),
            name: format!("mean({})", AXES[axis.min(1)]),
        }
    }

    pub fn moment(rho: &str) -> Result<Self> {
        Ok(Self { kind: FunctionalKind::Moment(Expr::parse(rho)?), name: format!("E[{rho}]") })
    }

    pub fn variance(axis: usize) -> Self {
        Self { kind: FunctionalKind::Variance { axis }, name: format!("var({})", AXES[axis.min(1)]) }
    }

    pub fn quantile(tau: f64, axis: usize) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidLevel(tau));
        }
        let name = if tau == 0.5 {
            format!("median({})", AXES[axis.min(1)])
        } else {
            format!("quantile({tau}, {})", AXES[axis.min(1)])
        };
        Ok(Self { kind: FunctionalKind::Quantile { tau, axis }, name })
    }

    pub fn median(axis: usize) -> Self {
        Self::quantile(0.5, axis).expect("0.5 is a valid level")
    }

    pub fn composite(name: impl Into<String>, f: impl Fn(&GridDensity) -> Result<f64> + Send + Sync + 'static) -> Self {
        Self { kind: FunctionalKind::Composite(Arc::new(f)), name: name.into() }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn eval(&self, p: &GridDensity) -> Result<f64> {
        self.evaluator(p.grid())?.eval(p.field())
    }

    /// Precomputes node values so that repeated evaluation on measures over `grid` is cheap.
    pub fn evaluator(&self, grid: &Arc<Grid>) -> Result<Evaluator> {
        let coord = |axis: usize, power: i32| -> Result<Field> {
            grid.axis(axis)?;
            Ok(Field::from_fn(grid.clone(), |x| x[axis].powi(power)))
        };
        Ok(match &self.kind {
            FunctionalKind::Moment(rho) => {
                if rho.coord_dim() > grid.dim() {
                    return Err(Error::InvalidArgument(format!(
                        "moment '{}' uses y on a {}-D grid",
                        self.name,
                        grid.dim()
                    )));
                }
                if rho.theta_dim() > 0 {
                    return Err(Error::InvalidArgument(format!("moment '{}' may not use parameters", self.name)));
                }
                Evaluator::Moment(Field::from_fn(grid.clone(), |x| rho.eval(x, &[])))
            }
            FunctionalKind::Variance { axis } => Evaluator::Variance(coord(*axis, 1)?, coord(*axis, 2)?),
            FunctionalKind::Quantile { tau, axis } => {
                grid.axis(*axis)?;
                Evaluator::Quantile { tau: *tau, axis: *axis }
            }
            FunctionalKind::Composite(f) => Evaluator::Composite(f.clone()),
        })
    }
}

pub enum Evaluator {
    Moment(Field),
    Variance(Field, Field),
    Quantile { tau: f64, axis: usize },
    Composite(CompositeFn),
}

impl Evaluator {
    /// Value at the measure `mu` scaled to unit mass; `mu` may be signed.
    pub fn eval(&self, mu: &Field) -> Result<f64> {
        match self {
            Evaluator::Moment(rho) => Ok(mu.dot(rho)? / mu.integrate()?),
            Evaluator::Variance(x, x2) => {
                let mass = mu.integrate()?;
                let m = mu.dot(x)? / mass;
                Ok(mu.dot(x2)? / mass - m * m)
            }
            Evaluator::Quantile { tau, axis } => mu.marginal_cdf(*axis)?.inverse(*tau),
            Evaluator::Composite(f) => f(&GridDensity::from_field_unchecked(mu.clone())?),
        }
    }
}

/// JSON descriptor of a functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FunctionalSpec {
    Mean {
        #[serde(default)]
        axis: usize,
    },
    Moment {
        rho: String,
    },
    Variance {
        #[serde(default)]
        axis: usize,
    },
    Quantile {
        tau: f64,
        #[serde(default)]
        axis: usize,
    },
    Median {
        #[serde(default)]
        axis: usize,
    },
}

impl FunctionalSpec {
    pub fn build(&self) -> Result<Functional> {
        let check = |axis: usize| {
            if axis > 1 {
                Err(Error::InvalidAxis { axis, dim: 2 })
            } else {
                Ok(axis)
            }
        };
        Ok(match self {
            FunctionalSpec::Mean { axis } => Functional::mean(check(*axis)?),
            FunctionalSpec::Moment { rho } => Functional::moment(rho)?,
            FunctionalSpec::Variance { axis } => Functional::variance(check(*axis)?),
            FunctionalSpec::Quantile { tau, axis } => Functional::quantile(*tau, check(*axis)?)?,
            FunctionalSpec::Median { axis } => Functional::median(check(*axis)?),
        })
    }
}

/// Smallest density at a quantile for which the quantile influence function is reported.
pub const MIN_QUANTILE_DENSITY: f64 = 1e-6;

pub fn influence_analytic(f: &Functional, p: &GridDensity) -> Result<TangentVector> {
    let grid = p.grid().clone();
    match &f.kind {
        FunctionalKind::Moment(rho) => match f.evaluator(&grid)? {
            Evaluator::Moment(field) => center(&field, p),
            _ => unreachable!("moment evaluator for {rho}"),
        },
        FunctionalKind::Variance { axis } => {
            let a = *axis;
            let m = p.mean(a)?;
            center(&Field::from_fn(grid, |x| (x[a] - m).powi(2)), p)
        }
        FunctionalKind::Quantile { tau, axis } => {
            let cdf = p.marginal_cdf(*axis)?;
            let q = cdf.inverse(*tau)?;
            let dens = cdf.density(q);
            if !(dens > MIN_QUANTILE_DENSITY) {
                return Err(Error::QuantileInfluenceUnstable { at: q, density: dens });
            }
            let field = Field::constant(grid.clone(), tau / dens).add(&Field::indicator_below(grid, *axis, q, -1.0 / dens)?)?;
            center(&field, p)
        }
        FunctionalKind::Composite(_) => Err(Error::NoAnalyticInfluence(f.name.clone())),
    }
}

/// Analytic influence when available, numerical otherwise.
pub fn influence(f: &Functional, p: &GridDensity) -> Result<TangentVector> {
    match influence_analytic(f, p) {
        Err(Error::NoAnalyticInfluence(_)) => {
            let schedule = MollifierSchedule::for_grid(p.grid());
            Ok(influence_numerical(f, p, &schedule)?.influence)
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSchedule {
    pub sigma0: f64,
    pub levels: usize,
    pub fd_step: f64,
}

impl MollifierSchedule {
    /// Finest width eight grid spacings, three levels, step 1e-4.
    pub fn for_grid(grid: &Grid) -> Self {
        let levels = 3;
        let dx = max_step(grid);
        Self { sigma0: 8.0 * dx * 2f64.powi(levels as i32 - 1), levels, fd_step: 1e-4 }
    }

    pub fn sigma(&self, j: usize) -> f64 {
        self.sigma0 * 0.5f64.powi(j as i32)
    }

    pub fn finest(&self) -> f64 {
        self.sigma(self.levels - 1)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.fd_step > 0.0 && self.fd_step < 0.5) {
            return Err(Error::InvalidSchedule(format!(
                "sigma0 = {} and fd_step = {} must be positive",
                self.sigma0, self.fd_step
            )));
        }
        if self.levels < 3 {
            return Err(Error::InvalidSchedule(format!("need at least 3 levels, got {}", self.levels)));
        }
        let dx = max_step(grid);
        if self.finest() < 4.0 * dx {
            return Err(Error::InvalidSchedule(format!(
                "finest width {} is below four grid spacings ({})",
                self.finest(),
                4.0 * dx
            )));
        }
        Ok(())
    }
}

fn max_step(grid: &Grid) -> f64 {
    grid.axes()
        .iter()
        .filter(|a| a.rule() != Rule::Counting)
        .map(|a| a.step())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct NumericalInfluence {
    pub influence: TangentVector,
    /// Per-level raw estimates before extrapolation, finest last.
    pub levels: Vec<Vec<f64>>,
    /// Sup norm of the change between consecutive levels.
    pub sup_changes: Vec<f64>,
    /// `L²(P)` norm of the change between consecutive levels; the convergence gate.
    pub l2_changes: Vec<f64>,
}

/// The kernel reproduces polynomials up to degree two, so the leading smoothing bias is
/// cubic in the width.
const RICHARDSON_ORDER: i32 = 3;
const CONVERGENCE_NOISE: f64 = 1e-8;

/// Mollified-mixture influence function: at each node `z`, the central difference in `t`
/// of `ψ((1−t)P + tG_z)` with `G_z` a Gaussian bump corrected to have unit mass and zero
/// first and second moments about `z` on the grid. The two finest levels are combined by
/// Richardson extrapolation.
pub fn influence_numerical(f: &Functional, p: &GridDensity, schedule: &MollifierSchedule) -> Result<NumericalInfluence> {
    let grid = p.grid().clone();
    let counting = grid.axes().iter().all(|a| a.rule() == Rule::Counting);
    if !counting {
        schedule.validate(&grid)?;
    }
    let eval = f.evaluator(&grid)?;
    let levels = schedule.levels;
    let t = schedule.fd_step;
    let weights = grid.weights();

    let per_node: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|iz| -> Result<Vec<f64>> {
            (0..levels)
                .map(|j| {
                    let g = if counting {
                        let mut v = vec![0.0; grid.len()];
                        v[iz] = 1.0 / weights[iz];
                        Field::from_values(grid.clone(), v)?
                    } else {
                        mollifier(&grid, &weights, iz, schedule.sigma(j))?
                    };
                    let up = p.field().scale(1.0 - t).add(&g.scale(t))?;
                    let down = p.field().scale(1.0 + t).add(&g.scale(-t))?;
                    Ok((eval.eval(&up)? - eval.eval(&down)?) / (2.0 * t))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let by_level: Vec<Vec<f64>> = (0..levels).map(|j| per_node.iter().map(|d| d[j]).collect()).collect();
    let mut sup_changes = Vec::with_capacity(levels - 1);
    let mut l2_changes = Vec::with_capacity(levels - 1);
    for j in 1..levels {
        let diff: Vec<f64> = by_level[j].iter().zip(&by_level[j - 1]).map(|(a, b)| a - b).collect();
        sup_changes.push(diff.iter().fold(0.0f64, |m, d| m.max(d.abs())));
        let sq: Vec<f64> = diff.iter().map(|d| d * d).collect();
        l2_changes.push(p.integrate_values(&sq)?.max(0.0).sqrt());
    }
    let (first, last) = (l2_changes[0], *l2_changes.last().expect("levels >= 3"));
    if last > first + CONVERGENCE_NOISE {
        return Err(Error::MollifierNotConverged { finest: last, coarsest: first });
    }

    let k = 2f64.powi(RICHARDSON_ORDER);
    let fine = &by_level[levels - 1];
    let coarse = &by_level[levels - 2];
    let extrapolated: Vec<f64> = fine.iter().zip(coarse).map(|(a, b)| (k * a - b) / (k - 1.0)).collect();
    let influence = center(&Field::from_values(grid, extrapolated)?, p)?;
    Ok(NumericalInfluence { influence, levels: by_level, sup_changes, l2_changes })
}

/// Gaussian bump at node `iz` times the quadratic that matches unit mass and vanishing
/// first and second moments about the centre under the grid quadrature.
fn mollifier(grid: &Arc<Grid>, weights: &[f64], iz: usize, sigma: f64) -> Result<Field> {
    let z = grid.point(iz);
    let dim = grid.dim();
    let reach = 8.0 * sigma;
    let basis = |x: [f64; 2]| -> Vec<f64> {
        let d0 = x[0] - z[0];
        if dim == 1 {
            vec![1.0, d0, d0 * d0]
        } else {
            let d1 = x[1] - z[1];
            vec![1.0, d0, d1, d0 * d0, d0 * d1, d1 * d1]
        }
    };
    let nb = if dim == 1 { 3 } else { 6 };
    let mut kern = vec![0.0; grid.len()];
    let mut gram = DMatrix::<f64>::zeros(nb, nb);
    for (i, k) in kern.iter_mut().enumerate() {
        let x = grid.point(i);
        let mut r2 = 0.0;
        let mut inside = true;
        for a in 0..dim {
            let d = x[a] - z[a];
            inside &= d.abs() <= reach;
            r2 += d * d;
        }
        if !inside {
            continue;
        }
        *k = (-0.5 * r2 / (sigma * sigma)).exp();
        let phi = basis(x);
        let w = weights[i] * *k;
        for r in 0..nb {
            for c in 0..nb {
                gram[(r, c)] += w * phi[r] * phi[c];
            }
        }
    }
    // scale the moment equations so the solve is well conditioned at tiny widths
    let mut s = vec![1.0; nb];
    for (r, sr) in s.iter_mut().enumerate() {
        *sr = gram[(r, r)].sqrt().recip();
    }
    let scaled = DMatrix::from_fn(nb, nb, |r, c| gram[(r, c)] * s[r] * s[c]);
    let mut rhs = DVector::zeros(nb);
    rhs[0] = s[0];
    let y = scaled
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularMatrix("mollifier moment system".into()))?;
    let coef: Vec<f64> = (0..nb).map(|r| y[r] * s[r]).collect();
    let values = kern
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            if k == 0.0 {
                0.0
            } else {
                k * basis(grid.point(i)).iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>()
            }
        })
        .collect();
    Field::from_values(grid.clone(), values)
}
