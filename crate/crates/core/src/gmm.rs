//! GMM functionals `ψ_W(P) = argmin_θ Pg(θ)ᵀ W Pg(θ)` on the nonparametric model:
//! solving, misspecification-robust influence functions, and the tangent-set geometry of
//! the correctly specified submodel.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::field::Field;
use crate::model_space::GridDensity;
use crate::tangent::{center, TangentVector};

/// Moment vector with exact first and second parameter derivatives.
#[derive(Debug, Clone)]
pub struct MomentSpec {
    pub g: Vec<Expr>,
    pub theta_dim: usize,
    pub bounds: Vec<(f64, f64)>,
    jac: Vec<Vec<Expr>>,
    hess: Vec<Vec<Vec<Expr>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSpecJson {
    pub g: Vec<String>,
    pub theta_dim: usize,
    pub bounds: Vec<[f64; 2]>,
}

impl MomentSpec {
    pub fn new(g: Vec<Expr>, theta_dim: usize, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let r = g.len();
        if theta_dim == 0 || r < theta_dim {
            return Err(Error::InvalidArgument(format!(
                "need r >= p >= 1 moments, got r = {r}, p = {theta_dim}"
            )));
        }
        if bounds.len() != theta_dim || bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument(format!("need {theta_dim} increasing parameter bounds")));
        }
        if let Some(e) = g.iter().find(|e| e.theta_dim() > theta_dim) {
            return Err(Error::InvalidArgument(format!("moment '{e}' uses a parameter beyond theta_dim = {theta_dim}")));
        }
        let jac: Vec<Vec<Expr>> = g
            .iter()
            .map(|e| (0..theta_dim).map(|j| e.derivative(Var::Theta(j))).collect())
            .collect();
        let hess = jac
            .iter()
            .map(|row| row.iter().map(|d| (0..theta_dim).map(|l| d.derivative(Var::Theta(l))).collect()).collect())
            .collect();
        Ok(Self { g, theta_dim, bounds, jac, hess })
    }

    pub fn parse(g: &[&str], theta_dim: usize, bounds: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(g.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()?, theta_dim, bounds)
    }

    pub fn from_json(spec: &MomentSpecJson) -> Result<Self> {
        let g: Vec<&str> = spec.g.iter().map(String::as_str).collect();
        Self::parse(&g, spec.theta_dim, spec.bounds.iter().map(|b| (b[0], b[1])).collect())
    }

    pub fn moment_dim(&self) -> usize {
        self.g.len()
    }

    fn node_values(&self, e: &Expr, p: &GridDensity, theta: &[f64]) -> Vec<f64> {
        p.grid().points().map(|x| e.eval(x, theta)).collect()
    }

    fn field(&self, e: &Expr, p: &GridDensity, theta: &[f64]) -> Result<Field> {
        Field::from_values(p.grid().clone(), self.node_values(e, p, theta))
    }
}

/// Weighting matrix choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Matrix(Vec<Vec<f64>>),
    Named(String),
}

/// `P g`, `G = P ∂θ g` and `P ∂²θ g_k` at one parameter value.
struct Moments {
    pg: DVector<f64>,
    g: DMatrix<f64>,
    h: Vec<DMatrix<f64>>,
}

fn moments(p: &GridDensity, spec: &MomentSpec, theta: &[f64], with_hessian: bool) -> Result<Moments> {
    let r = spec.moment_dim();
    let q = spec.theta_dim;
    let int = |e: &Expr| -> Result<f64> { p.integrate_values(&spec.node_values(e, p, theta)) };
    let mut pg = DVector::zeros(r);
    let mut g = DMatrix::zeros(r, q);
    let mut h = Vec::new();
    for k in 0..r {
        pg[k] = int(&spec.g[k])?;
        for j in 0..q {
            g[(k, j)] = if spec.jac[k][j].is_zero() { 0.0 } else { int(&spec.jac[k][j])? };
        }
        if with_hessian {
            let mut hk = DMatrix::zeros(q, q);
            for j in 0..q {
                for l in 0..q {
                    let e = &spec.hess[k][j][l];
                    hk[(j, l)] = if e.is_zero() { 0.0 } else { int(e)? };
                }
            }
            h.push(hk);
        }
    }
    Ok(Moments { pg, g, h })
}

#[derive(Debug, Clone)]
pub struct GmmSolution {
    pub theta: Vec<f64>,
    pub w: DMatrix<f64>,
    pub pg: DVector<f64>,
    pub g: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub criterion: f64,
    /// Norm of the criterion gradient `2 GᵀW Pg`.
    pub foc_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GmmSummary {
    pub theta: Vec<f64>,
    pub criterion: f64,
    pub foc_norm: f64,
    pub pg: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl GmmSolution {
    pub fn summary(&self) -> GmmSummary {
        GmmSummary {
            theta: self.theta.clone(),
            criterion: self.criterion,
            foc_norm: self.foc_norm,
            pg: self.pg.iter().copied().collect(),
            g: rows(&self.g),
            omega: rows(&self.omega),
            w: rows(&self.w),
        }
    }

    pub fn is_correctly_specified(&self) -> bool {
        self.pg.norm() < SPEC_TOL
    }
}

/// Threshold on `|Pg|` separating the correctly specified submodel.
pub const SPEC_TOL: f64 = 1e-8;
const FOC_TOL: f64 = 1e-8;

pub fn weight_matrix(spec: &WeightSpec, r: usize) -> Result<Option<DMatrix<f64>>> {
    match spec {
        WeightSpec::Named(s) if s == "optimal" => Ok(None),
        WeightSpec::Named(s) if s == "identity" => Ok(Some(DMatrix::identity(r, r))),
        WeightSpec::Named(s) => Err(Error::InvalidArgument(format!("unknown weight '{s}' (use a matrix or \"optimal\")"))),
        WeightSpec::Matrix(m) => {
            if m.len() != r || m.iter().any(|row| row.len() != r) {
                return Err(Error::InvalidArgument(format!("weight matrix must be {r}x{r}")));
            }
            Ok(Some(DMatrix::from_fn(r, r, |i, j| m[i][j])))
        }
    }
}

fn check_weight(w: &DMatrix<f64>, r: usize) -> Result<()> {
    if w.nrows() != r || w.ncols() != r {
        return Err(Error::InvalidArgument(format!("weight matrix must be {r}x{r}")));
    }
    let asym = (w - w.transpose()).abs().max();
    if asym > 1e-12 * (1.0 + w.abs().max()) {
        return Err(Error::InvalidArgument("weight matrix is not symmetric".into()));
    }
    if w.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument("weight matrix is not positive definite".into()));
    }
    Ok(())
}

/// Two-step efficient weighting: solve with `W = I`, then with `W = Ω̂⁻¹`.
pub fn gmm_solve_optimal(p: &GridDensity, spec: &MomentSpec) -> Result<GmmSolution> {
    let r = spec.moment_dim();
    let first = gmm_solve(p, spec, &DMatrix::identity(r, r))?;
    let w = first
        .omega
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("moment covariance".into()))?;
    gmm_solve(p, spec, &symmetrize(&w))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Multi-start minimization over a `3^p` lattice of the parameter box; Gauss–Newton with
/// Levenberg damping, finished by full Newton steps.
pub fn gmm_solve(p: &GridDensity, spec: &MomentSpec, w: &DMatrix<f64>) -> Result<GmmSolution> {
    let r = spec.moment_dim();
    let dim = spec.theta_dim;
    check_weight(w, r)?;
    let starts: Vec<Vec<f64>> = (0..3usize.pow(dim as u32))
        .map(|mut code| {
            spec.bounds
                .iter()
                .map(|&(lo, hi)| {
                    let k = code % 3;
                    code /= 3;
                    lo + (k as f64 + 0.5) / 3.0 * (hi - lo)
                })
                .collect()
        })
        .collect();
    let mut found: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .filter_map(|s| local_solve(p, spec, w, s.clone()).ok())
        .collect();
    if found.is_empty() {
        return Err(Error::GmmSolveFailed(format!("none of {} starts reached the first-order condition", starts.len())));
    }
    found.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lex(&a.0, &b.0)));
    let (best, q_best) = found[0].clone();
    for (theta, q) in &found[1..] {
        let dist = theta.iter().zip(&best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = 1.0 + best.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dist > 1e-6 * scale && q - q_best < 1e-10 {
            return Err(Error::NonUniqueMinimizer { a: best, b: theta.clone(), gap: q - q_best });
        }
    }
    finish(p, spec, w, best)
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

fn criterion(m: &Moments, w: &DMatrix<f64>) -> f64 {
    (m.pg.transpose() * w * &m.pg)[(0, 0)]
}

fn clamp_box(theta: &mut [f64], spec: &MomentSpec) {
    for (t, &(lo, hi)) in theta.iter_mut().zip(&spec.bounds) {
        *t = t.clamp(lo, hi);
    }
}

fn local_solve(p: &GridDensity, spec: &MomentSpec, w: &DMatrix<f64>, mut theta: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let mut lambda = 1e-3;
    let mut m = moments(p, spec, &theta, true)?;
    let mut q = criterion(&m, w);
    for _ in 0..300 {
        let grad = m.g.transpose() * w * &m.pg;
        if 2.0 * grad.norm() < 1e-13 {
            break;
        }
        let gn = m.g.transpose() * w * &m.g;
        let full = &gn + m.h.iter().enumerate().fold(DMatrix::zeros(spec.theta_dim, spec.theta_dim), |acc, (k, hk)| {
            acc + hk * (w.row(k) * &m.pg)[(0, 0)]
        });
        // prefer the exact Newton step when the Hessian is positive definite
        let newton = full.clone().cholesky().map(|c| c.solve(&(-&grad)));
        let mut accepted = false;
        if let Some(step) = newton {
            let mut trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp_box(&mut trial, spec);
            let mt = moments(p, spec, &trial, true)?;
            let qt = criterion(&mt, w);
            if qt <= q * (1.0 + 1e-12) + 1e-300 {
                let moved = trial.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                theta = trial;
                m = mt;
                q = qt;
                accepted = true;
                if moved < 1e-15 {
                    break;
                }
            }
        }
        if !accepted {
            let mut tries = 0;
            loop {
                let damped = &gn + DMatrix::from_diagonal(&gn.diagonal().map(|d| lambda * d.max(1e-12)));
                let Some(step) = damped.lu().solve(&(-&grad)) else {
                    lambda *= 10.0;
                    tries += 1;
                    if tries > 40 {
                        break;
                    }
                    continue;
                };
                let mut trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                clamp_box(&mut trial, spec);
                let mt = moments(p, spec, &trial, true)?;
                let qt = criterion(&mt, w);
                if qt < q {
                    theta = trial;
                    m = mt;
                    q = qt;
                    lambda = (lambda * 0.3).max(1e-12);
                    break;
                }
                lambda *= 10.0;
                tries += 1;
                if tries > 40 {
                    break;
                }
            }
            if tries > 40 {
                break;
            }
        }
    }
    let grad = m.g.transpose() * w * &m.pg;
    if 2.0 * grad.norm() < FOC_TOL {
        Ok((theta, q))
    } else {
        Err(Error::GmmSolveFailed(format!("first-order condition {:e} at {theta:?}", 2.0 * grad.norm())))
    }
}

fn finish(p: &GridDensity, spec: &MomentSpec, w: &DMatrix<f64>, theta: Vec<f64>) -> Result<GmmSolution> {
    let m = moments(p, spec, &theta, false)?;
    let r = spec.moment_dim();
    let fields: Vec<Field> = spec.g.iter().map(|e| spec.field(e, p, &theta)).collect::<Result<_>>()?;
    let mut omega = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            let v = p.field().dot3(&fields[i], &fields[j])?;
            omega[(i, j)] = v;
            omega[(j, i)] = v;
        }
    }
    let min_eig = SymmetricEigen::new(omega.clone()).eigenvalues.min();
    if !(min_eig > 1e-10) {
        return Err(Error::SingularMatrix(format!("moment covariance has eigenvalue {min_eig:e}")));
    }
    let foc_norm = 2.0 * (m.g.transpose() * w * &m.pg).norm();
    let criterion = criterion(&m, w);
    Ok(GmmSolution { theta, w: w.clone(), pg: m.pg, g: m.g, omega, criterion, foc_norm })
}

fn tangent_combination(p: &GridDensity, coef: &[f64], fields: &[Field]) -> Result<TangentVector> {
    let mut acc = Field::zeros(p.grid().clone());
    for (c, f) in coef.iter().zip(fields) {
        if *c != 0.0 {
            acc = acc.add(&f.scale(*c))?;
        }
    }
    center(&acc, p)
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// `ψ̃_W = −B⁻¹ (Σ_k (W Pg)_k ∂θ g_k + GᵀW g)`, `B = GᵀWG + Σ_k (W Pg)_k P ∂²θ g_k`.
pub fn gmm_influence(p: &GridDensity, spec: &MomentSpec, sol: &GmmSolution) -> Result<Vec<TangentVector>> {
    let m = moments(p, spec, &sol.theta, true)?;
    let w = &sol.w;
    let dim = spec.theta_dim;
    let r = spec.moment_dim();
    let wpg = w * &m.pg;
    let mut b = m.g.transpose() * w * &m.g;
    for (k, hk) in m.h.iter().enumerate() {
        b += hk * wpg[k];
    }
    let cond = condition_number(&b);
    if !(cond < 1e10) {
        return Err(Error::LocalIdentificationFailure(cond));
    }
    let b_inv = b.try_inverse().ok_or(Error::LocalIdentificationFailure(f64::INFINITY))?;
    // basis functions: g_k then ∂θ_j g_k
    let g_fields: Vec<Field> = spec.g.iter().map(|e| spec.field(e, p, &sol.theta)).collect::<Result<_>>()?;
    let gtw = m.g.transpose() * w;
    (0..dim)
        .map(|i| {
            let mut coef_g = vec![0.0; r];
            let mut terms: Vec<(f64, Field)> = Vec::new();
            for j in 0..dim {
                let bij = -b_inv[(i, j)];
                for k in 0..r {
                    coef_g[k] += bij * gtw[(j, k)];
                    if wpg[k] != 0.0 && !spec.jac[k][j].is_zero() {
                        terms.push((bij * wpg[k], spec.field(&spec.jac[k][j], p, &sol.theta)?));
                    }
                }
            }
            let (c, f): (Vec<f64>, Vec<Field>) = terms.into_iter().unzip();
            let coef: Vec<f64> = coef_g.into_iter().chain(c).collect();
            let fields: Vec<Field> = g_fields.iter().cloned().chain(f).collect();
            tangent_combination(p, &coef, &fields)
        })
        .collect()
}

/// `−(GᵀΩ⁻¹G)⁻¹ GᵀΩ⁻¹ g`.
pub fn gmm_efficient_influence(p: &GridDensity, spec: &MomentSpec, sol: &GmmSolution) -> Result<Vec<TangentVector>> {
    let omega_inv = sol
        .omega
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("moment covariance".into()))?;
    let gt_oi = sol.g.transpose() * &omega_inv;
    let info = &gt_oi * &sol.g;
    let info_inv = info
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("G' Omega^-1 G".into()))?;
    let coef = -(info_inv * gt_oi);
    let fields: Vec<Field> = spec.g.iter().map(|e| spec.field(e, p, &sol.theta)).collect::<Result<_>>()?;
    (0..spec.theta_dim)
        .map(|i| tangent_combination(p, &coef.row(i).iter().copied().collect::<Vec<_>>(), &fields))
        .collect()
}

/// Symmetric `Ω^{-1/2}` with eigenvalues floored at 1e-12.
pub fn inv_sqrt(omega: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(omega));
    let d = eig.eigenvalues.map(|l| 1.0 / l.max(1e-12).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// `Π_G^⊥ = I − Ω^{-1/2}G (GᵀΩ⁻¹G)⁻¹ GᵀΩ^{-1/2}`.
fn pi_g_perp(sol: &GmmSolution) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = inv_sqrt(&sol.omega);
    let a = &s * &sol.g;
    let ata = a.transpose() * &a;
    let ata_inv = ata
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("G' Omega^-1 G".into()))?;
    let r = sol.omega.nrows();
    let perp = DMatrix::identity(r, r) - &a * ata_inv * a.transpose();
    Ok((symmetrize(&perp), s))
}

fn require_specified(sol: &GmmSolution) -> Result<()> {
    let n = sol.pg.norm();
    if n < SPEC_TOL {
        Ok(())
    } else {
        Err(Error::Misspecified(n))
    }
}

/// `Π₀ξ = ξ − P[ξ gᵀ] Ω^{-1/2} Π_G^⊥ Ω^{-1/2} g`.
pub fn gmm_project_tangent(p: &GridDensity, spec: &MomentSpec, sol: &GmmSolution, xi: &TangentVector) -> Result<TangentVector> {
    require_specified(sol)?;
    let (perp, s) = pi_g_perp(sol)?;
    let fields: Vec<Field> = spec.g.iter().map(|e| spec.field(e, p, &sol.theta)).collect::<Result<_>>()?;
    let a = DVector::from_iterator(
        fields.len(),
        fields.iter().map(|f| p.field().dot3(xi.field(), f)).collect::<Result<Vec<_>>>()?,
    );
    let coef = &s * perp * &s * a;
    let removed = tangent_combination(p, &coef.iter().copied().collect::<Vec<_>>(), &fields)?;
    xi.sub(&removed)
}

/// `ζ = αᵀ Π_G^⊥ Ω^{-1/2} g`, a direction leaving the correctly specified model.
pub fn gmm_out_direction(p: &GridDensity, spec: &MomentSpec, sol: &GmmSolution, alpha: &[f64]) -> Result<TangentVector> {
    let r = spec.moment_dim();
    if r == spec.theta_dim {
        return Err(Error::NotOverIdentified(r));
    }
    require_specified(sol)?;
    if alpha.len() != r {
        return Err(Error::InvalidArgument(format!("alpha must have {r} entries")));
    }
    let (perp, s) = pi_g_perp(sol)?;
    let coef = (DVector::from_column_slice(alpha).transpose() * perp * s).transpose();
    let fields: Vec<Field> = spec.g.iter().map(|e| spec.field(e, p, &sol.theta)).collect::<Result<_>>()?;
    tangent_combination(p, &coef.iter().copied().collect::<Vec<_>>(), &fields)
}
