use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::field::{Field, MarginalCdf};
use crate::grid::Grid;

/// A probability density on a grid. Cheap to clone; the data is shared.
#[derive(Debug, Clone)]
pub struct GridDensity(Arc<Field>);

impl GridDensity {
    /// Accepts a field whose raw integral lies in `[0.99, 1.01]` and renormalizes it;
    /// anything further off is rejected.
    pub fn new(field: Field) -> Result<Self> {
        let mass = Self::check(&field)?;
        if !(0.99..=1.01).contains(&mass) {
            return Err(Error::NotNormalized(mass));
        }
        Ok(Self(Arc::new(field.scale(1.0 / mass))))
    }

    /// Normalizes any nonnegative field of positive finite mass.
    pub fn from_shape(field: Field) -> Result<Self> {
        let mass = Self::check(&field)?;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::NotNormalized(mass));
        }
        Ok(Self(Arc::new(field.scale(1.0 / mass))))
    }

    /// Wraps a signed measure without checks, scaled to unit mass. Used for the mixture
    /// paths of numerical influence functions, which dip below zero for negative steps.
    pub(crate) fn from_field_unchecked(field: Field) -> Result<Self> {
        let mass = field.integrate()?;
        Ok(Self(Arc::new(field.scale(1.0 / mass))))
    }

    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        Self::new(Field::from_values(grid, values)?)
    }

    pub fn from_fn_shape(grid: Arc<Grid>, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        Self::from_shape(Field::from_fn(grid, f))
    }

    fn check(field: &Field) -> Result<f64> {
        if let Some(i) = field.node_values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIntegrand(i));
        }
        let scale = field
            .node_values()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let min = field.min_value();
        if min < -1e-12 * scale {
            let node = field
                .node_values()
                .iter()
                .position(|&v| v == min)
                .unwrap_or(0);
            return Err(Error::NegativeDensity { node, value: min });
        }
        field.integrate()
    }

    pub fn uniform(grid: Arc<Grid>) -> Result<Self> {
        Self::from_fn_shape(grid, |_| 1.0)
    }

    /// Beta(a, b) on a 1-D grid spanning [0, 1]; shapes below 1 are rejected because the
    /// density is unbounded at the boundary.
    pub fn beta(grid: Arc<Grid>, a: f64, b: f64) -> Result<Self> {
        if !(a >= 1.0 && b >= 1.0) {
            return Err(Error::InvalidArgument(format!("beta shapes must be >= 1, got ({a}, {b})")));
        }
        let ln_b = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        Self::from_fn_shape(grid, move |x| beta_pdf(x[0], a, b, ln_b))
    }

    /// Normal(mean, sd) truncated to the grid domain.
    pub fn normal(grid: Arc<Grid>, mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(Error::InvalidArgument(format!("normal sd must be positive, got {sd}")));
        }
        Self::from_fn_shape(grid, move |x| {
            let z = (x[0] - mean) / sd;
            (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        })
    }

    /// Point masses on a counting grid `1..=k`.
    pub fn categorical(probs: &[f64]) -> Result<Self> {
        let grid = Arc::new(Grid::cells(probs.len())?);
        Self::new(Field::from_values(grid, probs.to_vec())?)
    }

    pub fn field(&self) -> &Field {
        &self.0
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.0.grid()
    }

    pub fn same(&self, other: &GridDensity) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn node_values(&self) -> Vec<f64> {
        self.0.node_values()
    }

    /// `∫ f dP` for a field `f` on the same grid.
    pub fn integrate(&self, f: &Field) -> Result<f64> {
        f.dot(&self.0)
    }

    /// `∫ f dP` for node values `f`.
    pub fn integrate_values(&self, f: &[f64]) -> Result<f64> {
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIntegrand(i));
        }
        Ok(self.0.mul_values(f).integrate()?)
    }

    pub fn marginal_cdf(&self, axis: usize) -> Result<MarginalCdf> {
        self.0.marginal_cdf(axis)
    }

    /// Quantile of the marginal along `axis`.
    pub fn quantile(&self, tau: f64, axis: usize) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidLevel(tau));
        }
        self.marginal_cdf(axis)?.inverse(tau)
    }

    /// Interpolated density value at `x`.
    pub fn density_at(&self, x: &[f64]) -> Result<f64> {
        self.0.eval(x)
    }

    /// Marginal density along `axis` at coordinate `x`.
    pub fn marginal_density_at(&self, axis: usize, x: f64) -> Result<f64> {
        let ax = self.grid().axis(axis)?;
        if !ax.contains(x) {
            return Err(Error::OutOfDomain(vec![x]));
        }
        Ok(self.marginal_cdf(axis)?.density(x))
    }

    pub fn mean(&self, axis: usize) -> Result<f64> {
        self.grid().axis(axis)?;
        self.integrate(&Field::from_fn(self.grid().clone(), |x| x[axis]))
    }
}

fn beta_pdf(x: f64, a: f64, b: f64, ln_b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    if x == 0.0 {
        return if a == 1.0 { (-ln_b).exp() } else { 0.0 };
    }
    if x == 1.0 {
        return if b == 1.0 { (-ln_b).exp() } else { 0.0 };
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_b).exp()
}
