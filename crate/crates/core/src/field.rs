//! Functions on a grid that may jump across axis-aligned cut-offs.
//!
//! A [`Field`] is a finite sum `Σ_k s_k(x) · 1{x ∈ C_k}` where every `s_k` is a smooth
//! function known at the grid nodes and every `C_k` is a lower-left quadrant
//! `{x_a ≤ q_a}` (or the whole domain). Quantile influence functions and the
//! counterfactual densities built from them have exactly this form, and the
//! quadrature splits each integral at the cut-off instead of smearing the jump
//! across a cell.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Cut, Grid};

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub cut: Cut,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    pieces: Vec<Piece>,
}

impl Field {
    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, pieces: vec![Piece { cut: Cut::NONE, values }] })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid, pieces: vec![Piece { cut: Cut::NONE, values }] }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        Self { grid, pieces: vec![Piece { cut: Cut::NONE, values: vec![c; n] }] }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// `c · 1{x_axis ≤ q}`.
    pub fn indicator_below(grid: Arc<Grid>, axis: usize, q: f64, c: f64) -> Result<Self> {
        grid.axis(axis)?;
        let n = grid.len();
        Ok(Self { grid, pieces: vec![Piece { cut: Cut::below(axis, q), values: vec![c; n] }] })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn is_smooth(&self) -> bool {
        self.pieces.iter().all(|p| p.cut.is_none())
    }

    /// Node values of a field without jumps.
    pub fn smooth_values(&self) -> Result<Vec<f64>> {
        if !self.is_smooth() {
            return Err(Error::NotSmooth("field has cut-off pieces"));
        }
        let mut out = vec![0.0; self.grid.len()];
        for p in &self.pieces {
            for (o, v) in out.iter_mut().zip(&p.values) {
                *o += v;
            }
        }
        Ok(out)
    }

    fn same_grid(&self, other: &Field) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    fn normalize(mut pieces: Vec<Piece>) -> Vec<Piece> {
        let mut out: Vec<Piece> = Vec::with_capacity(pieces.len());
        for p in pieces.drain(..) {
            if let Some(q) = out.iter_mut().find(|q| q.cut == p.cut) {
                for (a, b) in q.values.iter_mut().zip(&p.values) {
                    *a += b;
                }
            } else {
                out.push(p);
            }
        }
        // the unrestricted piece first keeps node evaluation order stable
        out.sort_by_key(|p| !p.cut.is_none());
        out
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.same_grid(other)?;
        let pieces = self.pieces.iter().chain(&other.pieces).cloned().collect();
        Ok(Field { grid: self.grid.clone(), pieces: Self::normalize(pieces) })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Field {
        let pieces = self
            .pieces
            .iter()
            .map(|p| Piece { cut: p.cut, values: p.values.iter().map(|v| c * v).collect() })
            .collect();
        Field { grid: self.grid.clone(), pieces }
    }

    pub fn add_scalar(&self, c: f64) -> Field {
        let mut pieces = self.pieces.clone();
        match pieces.iter_mut().find(|p| p.cut.is_none()) {
            Some(p) => p.values.iter_mut().for_each(|v| *v += c),
            None => pieces.insert(0, Piece { cut: Cut::NONE, values: vec![c; self.grid.len()] }),
        }
        Field { grid: self.grid.clone(), pieces }
    }

    /// Pointwise product; cut-offs intersect.
    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.same_grid(other)?;
        let mut pieces = Vec::with_capacity(self.pieces.len() * other.pieces.len());
        for a in &self.pieces {
            for b in &other.pieces {
                let values = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
                pieces.push(Piece { cut: a.cut.meet(&b.cut), values });
            }
        }
        Ok(Field { grid: self.grid.clone(), pieces: Self::normalize(pieces) })
    }

    /// Pointwise product with a smooth node-valued function.
    pub fn mul_values(&self, f: &[f64]) -> Field {
        let pieces = self
            .pieces
            .iter()
            .map(|p| Piece { cut: p.cut, values: p.values.iter().zip(f).map(|(a, b)| a * b).collect() })
            .collect();
        Field { grid: self.grid.clone(), pieces }
    }

    /// Pointwise map of a smooth field.
    pub fn map_smooth(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        let v = self.smooth_values()?;
        Field::from_values(self.grid.clone(), v.into_iter().map(f).collect())
    }

    /// Pointwise map of a field whose cut-offs all restrict the same single axis.
    pub fn map_pointwise(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        if self.is_smooth() {
            return self.map_smooth(f);
        }
        let mut axis = None;
        let mut qs: Vec<f64> = Vec::new();
        for p in &self.pieces {
            let restricted: Vec<usize> = (0..2).filter(|&a| p.cut.upper(a).is_some()).collect();
            match restricted.as_slice() {
                [] => {}
                [a] if axis.is_none_or(|b| b == *a) => {
                    axis = Some(*a);
                    qs.push(p.cut.upper(*a).expect("restricted axis"));
                }
                _ => return Err(Error::NotSmooth("cut-offs on more than one axis")),
            }
        }
        let axis = axis.expect("non-smooth field has a cut axis");
        qs.sort_by(f64::total_cmp);
        qs.dedup();
        // region j lies in (q_j, q_{j+1}]; its value collects every piece reaching q_{j+1}
        let n = self.grid.len();
        let region = |upper: Option<f64>| -> Vec<f64> {
            let mut v = vec![0.0; n];
            for p in &self.pieces {
                let keep = match (p.cut.upper(axis), upper) {
                    (None, _) => true,
                    (Some(_), None) => false,
                    (Some(c), Some(u)) => c >= u,
                };
                if keep {
                    v.iter_mut().zip(&p.values).for_each(|(a, b)| *a += b);
                }
            }
            v
        };
        let mapped: Vec<Vec<f64>> = qs
            .iter()
            .map(|&q| Some(q))
            .chain(std::iter::once(None))
            .map(|u| region(u).into_iter().map(&f).collect())
            .collect();
        let k = qs.len();
        let mut pieces = vec![Piece { cut: Cut::NONE, values: mapped[k].clone() }];
        for j in 0..k {
            let values = mapped[j].iter().zip(&mapped[j + 1]).map(|(a, b)| a - b).collect();
            pieces.push(Piece { cut: Cut::below(axis, qs[j]), values });
        }
        Ok(Field { grid: self.grid.clone(), pieces: Self::normalize(pieces) })
    }

    /// Lebesgue integral over the grid domain (sum for counting grids).
    pub fn integrate(&self) -> Result<f64> {
        let mut total = 0.0;
        for p in &self.pieces {
            if let Some(i) = p.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteIntegrand(i));
            }
            let w = self.grid.weights_with_cut(&p.cut);
            total += w.iter().zip(&p.values).map(|(w, v)| w * v).sum::<f64>();
        }
        Ok(total)
    }

    /// `∫ self · other`.
    pub fn dot(&self, other: &Field) -> Result<f64> {
        self.mul(other)?.integrate()
    }

    /// `∫ self · a · b`.
    pub fn dot3(&self, a: &Field, b: &Field) -> Result<f64> {
        self.mul(a)?.mul(b)?.integrate()
    }

    /// Value at node `idx` (left-continuous at cut-offs).
    pub fn node_value(&self, idx: usize) -> f64 {
        let x = self.grid.point(idx);
        self.pieces
            .iter()
            .filter(|p| p.cut.contains(&x))
            .map(|p| p.values[idx])
            .sum()
    }

    pub fn node_values(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.node_value(i)).collect()
    }

    /// Interpolated value at an arbitrary point (left-continuous at cut-offs).
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if !self.grid.contains(x) {
            return Err(Error::OutOfDomain(x.to_vec()));
        }
        Ok(self
            .pieces
            .iter()
            .filter(|p| p.cut.contains(x))
            .map(|p| self.grid.interpolate(&p.values, x))
            .sum())
    }

    /// Smallest value over the nodes and both one-sided limits along every cut-off.
    pub fn min_value(&self) -> f64 {
        let mut m = self.node_values().into_iter().fold(f64::INFINITY, f64::min);
        for (axis, q) in self.cut_positions() {
            for (left, right) in self.limits_along(axis, q) {
                m = m.min(left).min(right);
            }
        }
        m
    }

    /// Distinct `(axis, q)` cut-off positions inside the domain.
    pub fn cut_positions(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for p in &self.pieces {
            for a in 0..self.grid.dim() {
                if let Some(q) = p.cut.upper(a) {
                    let ax = &self.grid.axes()[a];
                    if q >= ax.lo() && q < ax.hi() && !out.contains(&(a, q)) {
                        out.push((a, q));
                    }
                }
            }
        }
        out
    }

    /// Left and right limits across the cut-off `x_axis = q`, at each node of the other axis.
    fn limits_along(&self, axis: usize, q: f64) -> Vec<(f64, f64)> {
        let others: Vec<f64> = if self.grid.dim() == 1 {
            vec![0.0]
        } else {
            self.grid.axes()[1 - axis].nodes().to_vec()
        };
        others
            .into_iter()
            .map(|o| {
                let mut x = [0.0; 2];
                x[axis] = q;
                if self.grid.dim() == 2 {
                    x[1 - axis] = o;
                }
                let mut left = 0.0;
                let mut right = 0.0;
                for p in &self.pieces {
                    if !p.cut.contains(&x) {
                        continue;
                    }
                    let v = self.grid.interpolate(&p.values, &x);
                    left += v;
                    if p.cut.upper(axis).is_none_or(|c| c > q) {
                        right += v;
                    }
                }
                (left, right)
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.pieces.iter().all(|p| p.values.iter().all(|v| v.is_finite()))
    }

    /// Marginal distribution function along `axis` of this field read as a measure.
    pub fn marginal_cdf(&self, axis: usize) -> Result<MarginalCdf> {
        let ax = self.grid.axis(axis)?.clone();
        let other = if self.grid.dim() == 2 { Some(1 - axis) } else { None };
        let parts = self
            .pieces
            .iter()
            .map(|p| {
                let other_cut = other.and_then(|o| p.cut.upper(o));
                let m = self.grid.marginal(&p.values, axis, other_cut);
                let prefix = ax.cumulative(&m).into_prefix();
                (m, prefix, p.cut.upper(axis))
            })
            .collect::<Vec<_>>();
        let mut cdf = MarginalCdf { axis: ax, parts, total: 1.0 };
        cdf.total = cdf.raw(f64::INFINITY);
        Ok(cdf)
    }
}

/// `F(x) = μ(x_axis ≤ x) / μ(domain)` for a field read as a (possibly signed) measure.
#[derive(Debug, Clone)]
pub struct MarginalCdf {
    axis: crate::grid::Axis,
    parts: Vec<(Vec<f64>, Vec<f64>, Option<f64>)>,
    total: f64,
}

impl MarginalCdf {
    fn raw(&self, x: f64) -> f64 {
        self.parts
            .iter()
            .map(|(m, prefix, cut)| {
                let upto = cut.map_or(x, |q| x.min(q));
                self.axis.cumulative_from_prefix(m, prefix, upto)
            })
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn at(&self, x: f64) -> f64 {
        self.raw(x) / self.total
    }

    /// Marginal density (left-continuous), normalized by the total mass.
    pub fn density(&self, x: f64) -> f64 {
        self.parts
            .iter()
            .filter(|(_, _, cut)| cut.is_none_or(|q| x <= q))
            .map(|(m, _, _)| self.axis.interpolate(m, x))
            .sum::<f64>()
            / self.total
    }

    pub fn axis(&self) -> &crate::grid::Axis {
        &self.axis
    }

    /// Root of `F(x) = tau`.
    pub fn inverse(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidLevel(tau));
        }
        let nodes = self.axis.nodes();
        if self.axis.rule() == crate::grid::Rule::Counting {
            return nodes
                .iter()
                .copied()
                .find(|&x| self.at(x) >= tau - 1e-12)
                .ok_or(Error::NonUniqueQuantile(tau));
        }
        let k = nodes
            .iter()
            .position(|&x| self.at(x) >= tau)
            .ok_or(Error::NonUniqueQuantile(tau))?;
        if k == 0 {
            return Err(Error::NonUniqueQuantile(tau));
        }
        let (mut a, mut b) = (nodes[k - 1], nodes[k]);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if self.at(mid) >= tau {
                b = mid;
            } else {
                a = mid;
            }
        }
        let x = if (self.at(a) - tau).abs() <= (self.at(b) - tau).abs() { a } else { b };
        let d = 0.5 * self.axis.step();
        let fx = self.at(x);
        if (self.at(x + d) - fx).min(fx - self.at(x - d)) < 1e-12 {
            return Err(Error::NonUniqueQuantile(tau));
        }
        Ok(x)
    }
}
