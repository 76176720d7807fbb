//! Exact inverse-CDF sampling from grid densities.

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::MarginalCdf;
use crate::grid::Rule;
use crate::model_space::{GridDensity, Sample};

#[derive(Debug, Clone)]
struct LineSampler {
    cdf: MarginalCdf,
    node_cdf: Vec<f64>,
}

impl LineSampler {
    fn new(cdf: MarginalCdf) -> Self {
        let node_cdf = cdf.axis().nodes().iter().map(|&x| cdf.at(x)).collect();
        Self { cdf, node_cdf }
    }

    fn invert(&self, u: f64) -> f64 {
        let nodes = self.cdf.axis().nodes();
        if self.cdf.axis().rule() == Rule::Counting {
            let k = self.node_cdf.partition_point(|&c| c < u).min(nodes.len() - 1);
            return nodes[k];
        }
        let k = self.node_cdf.partition_point(|&c| c < u).clamp(1, nodes.len() - 1);
        let (mut a, mut b) = (nodes[k - 1], nodes[k]);
        for _ in 0..64 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if self.cdf.at(m) >= u {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }
}

/// Conditional rows of a 2-D density for `Y | X`.
#[derive(Debug, Clone)]
struct RowSampler {
    rows: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct DensitySampler {
    density: GridDensity,
    x: LineSampler,
    rows: Option<RowSampler>,
}

impl DensitySampler {
    pub fn new(p: &GridDensity) -> Result<Self> {
        let x = LineSampler::new(p.marginal_cdf(0)?);
        let rows = if p.grid().dim() == 2 {
            let v = p.field().smooth_values()?;
            let ay = p.grid().axes()[1].clone();
            let n1 = ay.len();
            let rows = v
                .chunks(n1)
                .map(|row| {
                    let prefix = ay.cumulative(row).into_prefix();
                    let total = ay.cumulative_from_prefix(row, &prefix, ay.hi());
                    (row.to_vec(), prefix, total)
                })
                .collect();
            Some(RowSampler { rows })
        } else {
            None
        };
        Ok(Self { density: p.clone(), x, rows })
    }

    pub fn density(&self) -> &GridDensity {
        &self.density
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let x = self.x.invert(rng.random::<f64>());
        let Some(rows) = &self.rows else {
            return [x, 0.0];
        };
        let ax = &self.density.grid().axes()[0];
        let ay = &self.density.grid().axes()[1];
        let t = ((x - ax.lo()) / ax.step()).clamp(0.0, (ax.len() - 1) as f64);
        let i = (t.floor() as usize).min(ax.len() - 2);
        let s = t - i as f64;
        let (r0, r1) = (&rows.rows[i], &rows.rows[i + 1]);
        let cond = |y: f64| {
            (1.0 - s) * ay.cumulative_from_prefix(&r0.0, &r0.1, y) + s * ay.cumulative_from_prefix(&r1.0, &r1.1, y)
        };
        let total = (1.0 - s) * r0.2 + s * r1.2;
        let u = rng.random::<f64>() * total;
        let (mut a, mut b) = (ay.lo(), ay.hi());
        for _ in 0..64 {
            let m = 0.5 * (a + b);
            if cond(m) >= u {
                b = m;
            } else {
                a = m;
            }
        }
        [x, 0.5 * (a + b)]
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Sample> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let g = self.density.grid();
        let points = (0..n).map(|_| self.draw(rng)).collect();
        let bounds = g.axes().iter().map(|a| (a.lo(), a.hi())).collect();
        Sample::new(g.dim(), points, bounds)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::grid::Grid;

    #[test]
    fn beta_sample_moments() {
        let p = GridDensity::beta(Arc::new(Grid::line(0.0, 1.0, 801).unwrap()), 2.0, 5.0).unwrap();
        let s = DensitySampler::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sample = s.sample(200_000, &mut rng).unwrap();
        assert!((sample.mean(0) - 2.0 / 7.0).abs() < 3e-3);
        assert!((sample.quantile(0.5, 0).unwrap() - 0.264_449).abs() < 5e-3);
    }

    #[test]
    fn categorical_frequencies() {
        let p = GridDensity::categorical(&[0.5, 0.3, 0.2]).unwrap();
        let s = DensitySampler::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sample = s.sample(100_000, &mut rng).unwrap();
        let f2 = sample.points().iter().filter(|p| p[0] == 2.0).count() as f64 / 1e5;
        assert!((f2 - 0.3).abs() < 0.01);
    }

    #[test]
    fn conditional_rows_in_two_dimensions() {
        let g = Arc::new(Grid::rect((0.0, 1.0), (0.0, 1.0), 101, 101).unwrap());
        // Y | X uniform on [0,1], X with density 2x
        let p = GridDensity::from_fn_shape(g, |x| 2.0 * x[0]).unwrap();
        let s = DensitySampler::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sample = s.sample(100_000, &mut rng).unwrap();
        assert!((sample.mean(0) - 2.0 / 3.0).abs() < 5e-3);
        assert!((sample.mean(1) - 0.5).abs() < 5e-3);
    }
}
