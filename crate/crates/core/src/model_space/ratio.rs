use crate::error::{Error, Result};
use crate::field::Field;
use crate::model_space::GridDensity;

pub const DEFAULT_CLAMP: (f64, f64) = (1e-3, 1e3);

/// Likelihood ratio `dP/dQ` on a grid, clamped into `[m, M]`.
#[derive(Debug, Clone)]
pub struct LikelihoodRatio {
    values: Field,
    bounds: (f64, f64),
    clamped: bool,
}

impl LikelihoodRatio {
    pub fn from_values(values: Field, bounds: (f64, f64)) -> Result<Self> {
        let (m, big_m) = bounds;
        if !(m > 0.0 && big_m >= m && big_m.is_finite()) {
            return Err(Error::InvalidArgument(format!("clamp bounds ({m}, {big_m}) must satisfy 0 < m <= M < inf")));
        }
        let raw = values.smooth_values()?;
        let mut clamped = false;
        let v = raw
            .into_iter()
            .map(|r| {
                let c = if r.is_nan() { big_m } else { r.clamp(m, big_m) };
                if c != r {
                    clamped = true;
                }
                c
            })
            .collect();
        Ok(Self { values: Field::from_values(values.grid().clone(), v)?, bounds, clamped })
    }

    pub fn identity(p: &GridDensity) -> Self {
        Self { values: Field::constant(p.grid().clone(), 1.0), bounds: DEFAULT_CLAMP, clamped: false }
    }

    pub fn values(&self) -> &Field {
        &self.values
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn clamped(&self) -> bool {
        self.clamped
    }

    /// `dQ/dP`.
    pub fn reciprocal(&self) -> Field {
        self.values.map_smooth(|r| 1.0 / r).expect("ratio fields are smooth")
    }

    pub fn at(&self, x: &[f64]) -> Result<f64> {
        self.values.eval(x)
    }
}

/// Pointwise `dP/dQ` of two densities on the same grid.
pub fn likelihood_ratio(p: &GridDensity, q: &GridDensity, clamp: Option<(f64, f64)>) -> Result<LikelihoodRatio> {
    if !(std::sync::Arc::ptr_eq(p.grid(), q.grid()) || **p.grid() == **q.grid()) {
        return Err(Error::GridMismatch);
    }
    let pv = p.field().smooth_values()?;
    let qv = q.field().smooth_values()?;
    let raw = pv
        .iter()
        .zip(&qv)
        .map(|(&a, &b)| match (a > 0.0, b > 0.0) {
            (_, true) => a / b,
            (true, false) => f64::INFINITY,
            (false, false) => 1.0,
        })
        .collect();
    LikelihoodRatio::from_values(Field::from_values(p.grid().clone(), raw)?, clamp.unwrap_or(DEFAULT_CLAMP))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::Grid;

    fn unit() -> Arc<Grid> {
        Arc::new(Grid::line(0.0, 1.0, 401).unwrap())
    }

    #[test]
    fn identity_when_q_equals_p() {
        let p = GridDensity::beta(unit(), 2.0, 5.0).unwrap();
        let r = likelihood_ratio(&p, &p, None).unwrap();
        assert!(!r.clamped());
        assert!(r.values().node_values()[1..400].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn linear_policy_ratio() {
        let g = unit();
        let p = GridDensity::uniform(g.clone()).unwrap();
        let q = GridDensity::from_fn_shape(g.clone(), |x| 0.5 + x[0]).unwrap();
        let r = likelihood_ratio(&p, &q, None).unwrap();
        for (x, v) in g.points().zip(r.values().node_values()) {
            assert!((v - 1.0 / (0.5 + x[0])).abs() < 1e-10);
        }
        let vals = r.values().node_values();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        assert!((lo - 2.0 / 3.0).abs() < 1e-10 && (hi - 2.0).abs() < 1e-10);
    }

    #[test]
    fn clamping_is_reported() {
        let g = unit();
        let p = GridDensity::uniform(g.clone()).unwrap();
        let q = GridDensity::from_fn_shape(g, |x| (1.0 - x[0]).powi(2)).unwrap();
        let r = likelihood_ratio(&p, &q, Some((1e-3, 10.0))).unwrap();
        assert!(r.clamped());
        assert!(r.values().node_values().iter().all(|&v| v <= 10.0));
    }

    #[test]
    fn mismatched_grids() {
        let p = GridDensity::uniform(unit()).unwrap();
        let q = GridDensity::uniform(Arc::new(Grid::line(0.0, 1.0, 201).unwrap())).unwrap();
        assert!(matches!(likelihood_ratio(&p, &q, None), Err(Error::GridMismatch)));
    }
}
