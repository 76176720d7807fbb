use std::path::Path;

use crate::error::{Error, Result};

/// Observations in a 1-D or 2-D rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    dim: usize,
    points: Vec<[f64; 2]>,
    bounds: Vec<(f64, f64)>,
}

impl Sample {
    pub fn new(dim: usize, points: Vec<[f64; 2]>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        if !(dim == 1 || dim == 2) || bounds.len() != dim {
            return Err(Error::InvalidArgument(format!("sample dimension {dim} with {} bounds", bounds.len())));
        }
        for (i, p) in points.iter().enumerate() {
            for (a, &(lo, hi)) in bounds.iter().enumerate() {
                if !p[a].is_finite() {
                    return Err(Error::InvalidArgument(format!("non-finite observation {i}")));
                }
                if !(p[a] >= lo && p[a] <= hi) {
                    return Err(Error::OutOfDomain(p[..dim].to_vec()));
                }
            }
        }
        Ok(Self { dim, points, bounds })
    }

    pub fn from_1d(xs: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        Self::new(1, xs.into_iter().map(|x| [x, 0.0]).collect(), vec![(lo, hi)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn coords(&self, axis: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[axis]).collect()
    }

    /// Left-continuous empirical inverse CDF: the `⌈nτ⌉`-th order statistic.
    pub fn quantile(&self, tau: f64, axis: usize) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidLevel(tau));
        }
        if axis >= self.dim {
            return Err(Error::InvalidAxis { axis, dim: self.dim });
        }
        let mut xs = self.coords(axis);
        let n = xs.len();
        let k = ((n as f64 * tau).ceil() as usize).clamp(1, n);
        let (_, kth, _) = xs.select_nth_unstable_by(k - 1, f64::total_cmp);
        Ok(*kth)
    }

    pub fn mean(&self, axis: usize) -> f64 {
        self.points.iter().map(|p| p[axis]).sum::<f64>() / self.len() as f64
    }

    /// True when every observation shares the same coordinate along `axis`.
    pub fn is_constant(&self, axis: usize) -> bool {
        let x0 = self.points[0][axis];
        self.points.iter().all(|p| p[axis] == x0)
    }

    /// Biased (1/n) variance.
    pub fn variance(&self, axis: usize) -> f64 {
        let m = self.mean(axis);
        self.points.iter().map(|p| (p[axis] - m).powi(2)).sum::<f64>() / self.len() as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.dim == 1 {
            w.write_record(["x"])?;
        } else {
            w.write_record(["x", "y"])?;
        }
        for p in &self.points {
            let row: Vec<String> = p[..self.dim].iter().map(|v| format!("{v:.17e}")).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `x[,y]` rows; the bounding rectangle must be supplied by the caller.
    pub fn read_csv(path: impl AsRef<Path>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let dim = r.headers()?.len();
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut p = [0.0; 2];
            for a in 0..dim.min(2) {
                p[a] = rec[a]
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("sample value '{}': {e}", &rec[a])))?;
            }
            points.push(p);
        }
        Self::new(dim, points, bounds)
    }
}
