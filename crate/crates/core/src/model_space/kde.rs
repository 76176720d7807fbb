//! Gaussian kernel density estimation on compact grids with reflection at the edges.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::model_space::{GridDensity, Sample};

/// Silverman's rule `1.06 σ̂ n^{-1/5}` along `axis`.
pub fn silverman_bandwidth(sample: &Sample, axis: usize) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!("need at least 2 observations, got {n}")));
    }
    let sd = sample.variance(axis).sqrt();
    if sample.is_constant(axis) || !(sd > 0.0) {
        return Err(Error::DegenerateSample(format!("zero variance along axis {axis}")));
    }
    Ok(1.06 * sd * (n as f64).powf(-0.2))
}

fn gauss(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// Reflected kernel weights of one observation at every node of an axis.
fn reflected_kernel(nodes: &[f64], lo: f64, hi: f64, xi: f64, h: f64) -> Vec<(usize, f64)> {
    let reach = 8.0 * h;
    let mut out = Vec::new();
    for (i, &x) in nodes.iter().enumerate() {
        let mut k = 0.0;
        for c in [xi, 2.0 * lo - xi, 2.0 * hi - xi] {
            let d = x - c;
            if d.abs() <= reach {
                k += gauss(d / h) / h;
            }
        }
        if k > 0.0 {
            out.push((i, k));
        }
    }
    out
}

/// Kernel density estimate on `grid`, renormalized to integrate to one. Product kernel
/// in 2-D; `bandwidth` overrides the per-axis Silverman default.
pub fn kde_fit(sample: &Sample, grid: Arc<Grid>, bandwidth: Option<&[f64]>) -> Result<GridDensity> {
    if sample.len() < 2 {
        return Err(Error::DegenerateSample(format!("need at least 2 observations, got {}", sample.len())));
    }
    let dim = grid.dim();
    if sample.dim() != dim {
        return Err(Error::InvalidArgument(format!("{}-D sample on a {dim}-D grid", sample.dim())));
    }
    let mut h = Vec::with_capacity(dim);
    for a in 0..dim {
        if sample.is_constant(a) {
            return Err(Error::DegenerateSample(format!("zero variance along axis {a}")));
        }
        h.push(match bandwidth {
            Some(b) => *b.get(a).ok_or_else(|| Error::InvalidArgument("bandwidth per axis required".into()))?,
            None => silverman_bandwidth(sample, a)?,
        });
    }
    if h.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h:?}")));
    }
    let mut values = vec![0.0; grid.len()];
    let axes = grid.axes();
    for p in sample.points() {
        let k0 = reflected_kernel(axes[0].nodes(), axes[0].lo(), axes[0].hi(), p[0], h[0]);
        if dim == 1 {
            for (i, k) in k0 {
                values[i] += k;
            }
        } else {
            let n1 = axes[1].len();
            let k1 = reflected_kernel(axes[1].nodes(), axes[1].lo(), axes[1].hi(), p[1], h[1]);
            for &(i, a) in &k0 {
                for &(j, b) in &k1 {
                    values[i * n1 + j] += a * b;
                }
            }
        }
    }
    GridDensity::from_shape(Field::from_values(grid, values)?)
}

/// Reflected kernel estimate of the marginal density along `axis` at one point.
pub fn kde_at(sample: &Sample, axis: usize, x: f64, bandwidth: f64) -> f64 {
    let (lo, hi) = sample.bounds()[axis];
    let h = bandwidth;
    let s: f64 = sample
        .points()
        .iter()
        .map(|p| {
            let xi = p[axis];
            gauss((x - xi) / h) + gauss((x - (2.0 * lo - xi)) / h) + gauss((x - (2.0 * hi - xi)) / h)
        })
        .sum();
    s / (h * sample.len() as f64)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn degenerate_sample_is_rejected() {
        let s = Sample::from_1d(vec![0.3; 50], 0.0, 1.0).unwrap();
        let g = Arc::new(Grid::line(0.0, 1.0, 101).unwrap());
        assert!(matches!(kde_fit(&s, g, None), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn uniform_sample_l1_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let s = Sample::from_1d(xs, 0.0, 1.0).unwrap();
        let g = Arc::new(Grid::line(0.0, 1.0, 801).unwrap());
        let d = kde_fit(&s, g, None).unwrap();
        let l1 = d.field().add_scalar(-1.0).map_smooth(f64::abs).unwrap().integrate().unwrap();
        assert!(l1 < 0.05, "L1 = {l1}");
    }

    #[test]
    fn reflected_point_estimate_is_unbiased_at_the_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..50_000).map(|_| rng.random::<f64>()).collect();
        let s = Sample::from_1d(xs, 0.0, 1.0).unwrap();
        let h = silverman_bandwidth(&s, 0).unwrap();
        assert!((kde_at(&s, 0, 0.0, h) - 1.0).abs() < 0.1);
    }
}
