//! Uniform rectangular grids and their quadrature rules.
//!
//! Every axis carries a piecewise-polynomial interpolant that is consistent with its
//! quadrature weights: composite Simpson integrates the panel-wise quadratic through
//! nodes `(2k, 2k+1, 2k+2)`, the trapezoid fallback integrates the piecewise-linear
//! interpolant. Partial integrals `∫_lo^q` integrate the same interpolant up to `q`,
//! so that cut-off regions, cumulative distribution functions and full-domain
//! integrals all agree with one another.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    Simpson,
    Trapezoid,
    /// Point masses at integer-labelled cells; integrals are finite sums.
    Counting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    lo: f64,
    hi: f64,
    n: usize,
    rule: Rule,
    step: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Axis {
    /// A uniform axis on `[lo, hi]` with `n` nodes. Simpson when `n` is odd,
    /// trapezoid otherwise.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::InvalidGrid(format!("bad interval [{lo}, {hi}]")));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {n}")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        nodes[n - 1] = hi;
        let rule = if n % 2 == 1 { Rule::Simpson } else { Rule::Trapezoid };
        let weights = match rule {
            Rule::Simpson => (0..n)
                .map(|i| {
                    let c = if i == 0 || i == n - 1 {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    c * step / 3.0
                })
                .collect(),
            _ => (0..n)
                .map(|i| if i == 0 || i == n - 1 { 0.5 * step } else { step })
                .collect(),
        };
        Ok(Self { lo, hi, n, rule, step, nodes, weights })
    }

    /// Cells labelled `1..=k` with unit weights.
    pub fn counting(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 cells, got {k}")));
        }
        Ok(Self {
            lo: 1.0,
            hi: k as f64,
            n: k,
            rule: Rule::Counting,
            step: 1.0,
            nodes: (1..=k).map(|i| i as f64).collect(),
            weights: vec![1.0; k],
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }
    pub fn hi(&self) -> f64 {
        self.hi
    }
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn rule(&self) -> Rule {
        self.rule
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn contains(&self, x: f64) -> bool {
        let tol = 1e-12 * (self.hi - self.lo).abs().max(1.0);
        x >= self.lo - tol && x <= self.hi + tol
    }

    /// Start node of the interpolation panel containing `x` (clamped to the axis).
    fn panel(&self, x: f64) -> (usize, f64) {
        let t = ((x - self.lo) / self.step).clamp(0.0, (self.n - 1) as f64);
        match self.rule {
            Rule::Simpson => {
                let last = self.n - 3;
                let k = (((t / 2.0).floor() as usize) * 2).min(last);
                (k, t - k as f64)
            }
            _ => {
                let k = (t.floor() as usize).min(self.n - 2);
                (k, t - k as f64)
            }
        }
    }

    /// Local weights `∫_{x_k}^{x_k + s h}` of the panel interpolant starting at node `k`.
    fn local_weights(&self, s: f64) -> [f64; 3] {
        let h = self.step;
        match self.rule {
            Rule::Simpson => {
                let s2 = s * s;
                let s3 = s2 * s;
                [
                    h * (s3 / 6.0 - 0.75 * s2 + s),
                    h * (-s3 / 3.0 + s2),
                    h * (s3 / 6.0 - 0.25 * s2),
                ]
            }
            _ => [h * (s - 0.5 * s * s), h * 0.5 * s * s, 0.0],
        }
    }

    /// Weights `w` with `Σ w_i f_i = ∫_lo^q f` for the axis interpolant of `f`.
    pub fn partial_weights(&self, q: f64) -> Vec<f64> {
        let mut w = vec![0.0; self.n];
        if self.rule == Rule::Counting {
            for (wi, &x) in w.iter_mut().zip(&self.nodes) {
                if x <= q + 1e-9 {
                    *wi = 1.0;
                }
            }
            return w;
        }
        if q <= self.lo {
            return w;
        }
        if q >= self.hi {
            w.copy_from_slice(&self.weights);
            return w;
        }
        let (k, s) = self.panel(q);
        // complete panels before k
        match self.rule {
            Rule::Simpson => {
                let mut p = 0;
                while p < k {
                    let h3 = self.step / 3.0;
                    w[p] += h3;
                    w[p + 1] += 4.0 * h3;
                    w[p + 2] += h3;
                    p += 2;
                }
                let lw = self.local_weights(s);
                for j in 0..3 {
                    w[k + j] += lw[j];
                }
            }
            _ => {
                for i in 0..k {
                    w[i] += 0.5 * self.step;
                    w[i + 1] += 0.5 * self.step;
                }
                let lw = self.local_weights(s);
                w[k] += lw[0];
                w[k + 1] += lw[1];
            }
        }
        w
    }

    /// Value of the axis interpolant of node values `f` at `x`.
    pub fn interpolate(&self, f: &[f64], x: f64) -> f64 {
        debug_assert_eq!(f.len(), self.n);
        match self.rule {
            Rule::Counting => self
                .nodes
                .iter()
                .position(|&c| (c - x).abs() < 1e-9)
                .map_or(0.0, |i| f[i]),
            Rule::Simpson => {
                let (k, s) = self.panel(x);
                let l0 = 0.5 * (s - 1.0) * (s - 2.0);
                let l1 = -s * (s - 2.0);
                let l2 = 0.5 * s * (s - 1.0);
                l0 * f[k] + l1 * f[k + 1] + l2 * f[k + 2]
            }
            Rule::Trapezoid => {
                let (k, s) = self.panel(x);
                (1.0 - s) * f[k] + s * f[k + 1]
            }
        }
    }

    /// Cumulative integral helper for repeated `∫_lo^q f` evaluations.
    pub fn cumulative<'a>(&'a self, f: &'a [f64]) -> Cumulative<'a> {
        let mut at_panel = vec![0.0; self.n];
        match self.rule {
            Rule::Counting => {
                let mut acc = 0.0;
                for i in 0..self.n {
                    acc += f[i];
                    at_panel[i] = acc;
                }
            }
            Rule::Simpson => {
                let h3 = self.step / 3.0;
                let mut k = 0;
                while k + 2 < self.n {
                    at_panel[k + 2] = at_panel[k] + h3 * (f[k] + 4.0 * f[k + 1] + f[k + 2]);
                    k += 2;
                }
            }
            Rule::Trapezoid => {
                for k in 0..self.n - 1 {
                    at_panel[k + 1] = at_panel[k] + 0.5 * self.step * (f[k] + f[k + 1]);
                }
            }
        }
        Cumulative { axis: self, f, at_panel }
    }
}

/// Prefix integrals of one function along an axis.
pub struct Cumulative<'a> {
    axis: &'a Axis,
    f: &'a [f64],
    /// Integral from `lo` to each panel start node (only panel starts are meaningful
    /// for Simpson; every node for the other rules).
    at_panel: Vec<f64>,
}

impl Cumulative<'_> {
    /// `∫_lo^q f` of the interpolant.
    pub fn at(&self, q: f64) -> f64 {
        self.axis.cumulative_from_prefix(self.f, &self.at_panel, q)
    }

    pub fn total(&self) -> f64 {
        *self.at_panel.last().unwrap_or(&0.0)
    }

    pub fn into_prefix(self) -> Vec<f64> {
        self.at_panel
    }
}

impl Axis {
    /// `∫_lo^q f` given the panel prefix sums produced by [`Axis::cumulative`].
    pub fn cumulative_from_prefix(&self, f: &[f64], prefix: &[f64], q: f64) -> f64 {
        match self.rule {
            Rule::Counting => {
                let mut idx = None;
                for (i, &x) in self.nodes.iter().enumerate() {
                    if x <= q + 1e-9 {
                        idx = Some(i);
                    }
                }
                idx.map_or(0.0, |i| prefix[i])
            }
            _ => {
                if q <= self.lo {
                    return 0.0;
                }
                let q = q.min(self.hi);
                let (k, s) = self.panel(q);
                let lw = self.local_weights(s);
                let mut v = prefix[k] + lw[0] * f[k] + lw[1] * f[k + 1];
                if self.rule == Rule::Simpson {
                    v += lw[2] * f[k + 2];
                }
                v
            }
        }
    }
}

/// A 1-D or 2-D rectangular grid; node index is row-major (`i0 * n1 + i1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidGrid(format!("{} axes; only 1-D and 2-D supported", axes.len())));
        }
        Ok(Self { axes })
    }

    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![Axis::uniform(lo, hi, n)?])
    }

    pub fn rect(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        Self::new(vec![Axis::uniform(x.0, x.1, nx)?, Axis::uniform(y.0, y.1, ny)?])
    }

    pub fn cells(k: usize) -> Result<Self> {
        Self::new(vec![Axis::counting(k)?])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, a: usize) -> Result<&Axis> {
        self.axes.get(a).ok_or(Error::InvalidAxis { axis: a, dim: self.dim() })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|a| a.weights.iter().sum::<f64>()).product()
    }

    /// Coordinates of node `idx`.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        match self.axes.len() {
            1 => [self.axes[0].nodes[idx], 0.0],
            _ => {
                let n1 = self.axes[1].n;
                [self.axes[0].nodes[idx / n1], self.axes[1].nodes[idx % n1]]
            }
        }
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() >= self.dim() && self.axes.iter().zip(x).all(|(a, &v)| a.contains(v))
    }

    /// Tensor quadrature weights with optional per-axis upper cut-offs.
    pub fn weights_with_cut(&self, cut: &Cut) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = self
            .axes
            .iter()
            .enumerate()
            .map(|(a, ax)| match cut.upper(a) {
                Some(q) => ax.partial_weights(q),
                None => ax.weights.clone(),
            })
            .collect();
        match per_axis.len() {
            1 => per_axis.into_iter().next().unwrap_or_default(),
            _ => {
                let (w0, w1) = (&per_axis[0], &per_axis[1]);
                let mut w = Vec::with_capacity(w0.len() * w1.len());
                for &a in w0 {
                    for &b in w1 {
                        w.push(a * b);
                    }
                }
                w
            }
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights_with_cut(&Cut::NONE)
    }

    /// Interpolated value of node values `f` at point `x`.
    pub fn interpolate(&self, f: &[f64], x: &[f64]) -> f64 {
        match self.axes.len() {
            1 => self.axes[0].interpolate(f, x[0]),
            _ => {
                let (a0, a1) = (&self.axes[0], &self.axes[1]);
                let n1 = a1.n;
                let row: Vec<f64> = (0..a0.n)
                    .map(|i| a1.interpolate(&f[i * n1..(i + 1) * n1], x[1]))
                    .collect();
                a0.interpolate(&row, x[0])
            }
        }
    }

    /// Node values along axis `a` of `f` integrated over the other axis, with an
    /// optional cut-off applied on that other axis.
    pub fn marginal(&self, f: &[f64], a: usize, other_cut: Option<f64>) -> Vec<f64> {
        match self.axes.len() {
            1 => f.to_vec(),
            _ => {
                let other = 1 - a;
                let w = match other_cut {
                    Some(q) => self.axes[other].partial_weights(q),
                    None => self.axes[other].weights.clone(),
                };
                let (n0, n1) = (self.axes[0].n, self.axes[1].n);
                if a == 0 {
                    (0..n0)
                        .map(|i| (0..n1).map(|j| w[j] * f[i * n1 + j]).sum())
                        .collect()
                } else {
                    (0..n1)
                        .map(|j| (0..n0).map(|i| w[i] * f[i * n1 + j]).sum())
                        .collect()
                }
            }
        }
    }

    /// Axis index of node `idx` along axis `a`.
    pub fn axis_index(&self, idx: usize, a: usize) -> usize {
        match (self.axes.len(), a) {
            (1, _) => idx,
            (_, 0) => idx / self.axes[1].n,
            _ => idx % self.axes[1].n,
        }
    }
}

/// Lower-left quadrant `{x : x_a ≤ q_a}` for the axes carrying a cut-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut(pub [Option<f64>; 2]);

impl Cut {
    pub const NONE: Cut = Cut([None, None]);

    pub fn below(axis: usize, q: f64) -> Self {
        let mut c = [None, None];
        c[axis] = Some(q);
        Cut(c)
    }

    pub fn upper(&self, axis: usize) -> Option<f64> {
        self.0.get(axis).copied().flatten()
    }

    pub fn is_none(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }

    /// Intersection of two quadrants.
    pub fn meet(&self, other: &Cut) -> Cut {
        let mut c = [None, None];
        for (a, slot) in c.iter_mut().enumerate() {
            *slot = match (self.upper(a), other.upper(a)) {
                (Some(p), Some(q)) => Some(p.min(q)),
                (p, q) => p.or(q),
            };
        }
        Cut(c)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..2).all(|a| match self.upper(a) {
            Some(q) => x.get(a).is_none_or(|&v| v <= q),
            None => true,
        })
    }
}
