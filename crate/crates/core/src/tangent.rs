//! Score directions, the information and policy inner products, and the gradient
//! operator `A*` that turns influence functions into policy gradients.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::model_space::{io::write_field_csv, likelihood_ratio, GridDensity, LikelihoodRatio};

/// A mean-zero function based at a density.
#[derive(Debug, Clone)]
pub struct TangentVector {
    base: GridDensity,
    field: Field,
}

impl TangentVector {
    pub fn base(&self) -> &GridDensity {
        &self.base
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn node_values(&self) -> Vec<f64> {
        self.field.node_values()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.field.eval(x)
    }

    fn check_base(&self, other: &TangentVector) -> Result<()> {
        if same_base(&self.base, &other.base) {
            Ok(())
        } else {
            Err(Error::BaseMismatch)
        }
    }

    pub fn add(&self, other: &TangentVector) -> Result<TangentVector> {
        self.check_base(other)?;
        Ok(TangentVector { base: self.base.clone(), field: self.field.add(&other.field)? })
    }

    pub fn sub(&self, other: &TangentVector) -> Result<TangentVector> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> TangentVector {
        TangentVector { base: self.base.clone(), field: self.field.scale(c) }
    }

    /// `∫ self · other dP`.
    pub fn dot_p(&self, other: &TangentVector) -> Result<f64> {
        self.check_base(other)?;
        self.base.field().dot3(&self.field, &other.field)
    }

    /// Squared `L²(P)` norm.
    pub fn norm2_p(&self) -> Result<f64> {
        self.dot_p(self)
    }

    pub fn mean(&self) -> Result<f64> {
        self.base.integrate(&self.field)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_field_csv(&self.field, "value", path)
    }
}

fn same_base(a: &GridDensity, b: &GridDensity) -> bool {
    a.same(b) || (**a.grid() == **b.grid() && a.field().pieces() == b.field().pieces())
}

/// `f − ∫ f dP` as a tangent vector at `P`.
pub fn center(f: &Field, p: &GridDensity) -> Result<TangentVector> {
    if !(Arc::ptr_eq(f.grid(), p.grid()) || **f.grid() == **p.grid()) {
        return Err(Error::GridMismatch);
    }
    if !f.is_finite() {
        return Err(Error::InvalidArgument("tangent values must be finite".into()));
    }
    let m = p.integrate(f)?;
    Ok(TangentVector { base: p.clone(), field: f.add_scalar(-m) })
}

pub fn center_values(values: Vec<f64>, p: &GridDensity) -> Result<TangentVector> {
    center(&Field::from_values(p.grid().clone(), values)?, p)
}

#[derive(Debug, Clone)]
pub enum PolicyMetric {
    Information,
    /// `g(u, v) = ∫ u v dQ` with the ratio `r = dP/dQ` clamped into its bounds.
    Policy { q: GridDensity, ratio: LikelihoodRatio },
}

impl PolicyMetric {
    pub fn policy(p: &GridDensity, q: &GridDensity, clamp: Option<(f64, f64)>) -> Result<Self> {
        let ratio = likelihood_ratio(p, q, clamp)?;
        Ok(PolicyMetric::Policy { q: q.clone(), ratio })
    }

    pub fn from_ratio(q: GridDensity, ratio: LikelihoodRatio) -> Self {
        PolicyMetric::Policy { q, ratio }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PolicyMetric::Information => "information",
            PolicyMetric::Policy { .. } => "policy",
        }
    }

    pub fn ratio(&self) -> Option<&LikelihoodRatio> {
        match self {
            PolicyMetric::Information => None,
            PolicyMetric::Policy { ratio, .. } => Some(ratio),
        }
    }
}

/// The metric `g(u, v)`. Under a policy metric the measure is `dP / r`, which equals `dQ`
/// wherever the ratio is not clamped and keeps `A*` and its inverse exact where it is.
pub fn inner(u: &TangentVector, v: &TangentVector, metric: &PolicyMetric) -> Result<f64> {
    u.check_base(v)?;
    match metric {
        PolicyMetric::Information => u.dot_p(v),
        PolicyMetric::Policy { ratio, .. } => {
            let w = u.field.mul(&v.field)?.mul(&ratio.reciprocal())?;
            u.base.integrate(&w)
        }
    }
}

pub fn norm2(u: &TangentVector, metric: &PolicyMetric) -> Result<f64> {
    inner(u, u, metric)
}

/// `A*v = [v − P(v r)/P(r)] r`, recentred; the identity under the information metric.
pub fn grad_op_apply(v: &TangentVector, metric: &PolicyMetric) -> Result<TangentVector> {
    match metric {
        PolicyMetric::Information => Ok(v.clone()),
        PolicyMetric::Policy { ratio, .. } => {
            let p = &v.base;
            let r = ratio.values();
            let c = p.integrate(&v.field.mul(r)?)? / p.integrate(r)?;
            center(&v.field.add_scalar(-c).mul(r)?, p)
        }
    }
}

/// `(A*)⁻¹u = u / r − P(u / r)`.
pub fn grad_op_inverse(u: &TangentVector, metric: &PolicyMetric) -> Result<TangentVector> {
    match metric {
        PolicyMetric::Information => Ok(u.clone()),
        PolicyMetric::Policy { ratio, .. } => center(&u.field.mul(&ratio.reciprocal())?, &u.base),
    }
}

/// Gradient of a functional with influence function `influence` under `metric`.
pub fn policy_gradient(influence: &TangentVector, metric: &PolicyMetric) -> Result<TangentVector> {
    grad_op_apply(influence, metric)
}
