//! Distributions on the sample space: grid densities, samples, likelihood ratios and
//! kernel density estimates.

mod density;
pub mod io;
mod kde;
mod ratio;
mod sample;
mod sampler;

pub use density::GridDensity;
pub use kde::{kde_at, kde_fit, silverman_bandwidth};
pub use ratio::{likelihood_ratio, LikelihoodRatio, DEFAULT_CLAMP};
pub use sample::Sample;
pub use sampler::DensitySampler;

use crate::error::Result;
use crate::field::Field;

/// `∫ f dP` for node values of `f`.
pub fn integrate(f: &[f64], p: &GridDensity) -> Result<f64> {
    p.integrate_values(f)
}

/// `∫ f dP` for a field.
pub fn integrate_field(f: &Field, p: &GridDensity) -> Result<f64> {
    p.integrate(f)
}

/// Either a grid density or an empirical sample.
pub enum Distribution<'a> {
    Grid(&'a GridDensity),
    Sample(&'a Sample),
}

pub fn quantile(p: Distribution<'_>, tau: f64, axis: usize) -> Result<f64> {
    match p {
        Distribution::Grid(d) => d.quantile(tau, axis),
        Distribution::Sample(s) => s.quantile(tau, axis),
    }
}

pub fn density_at(p: &GridDensity, x: &[f64]) -> Result<f64> {
    p.density_at(x)
}
