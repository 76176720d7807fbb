//! Two-parameter models in local coordinates: Fisher information, coordinate gradients
//! in the score basis, and parameter-to-parameter sensitivities.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};

pub type Matrix2 = [[f64; 2]; 2];
pub type InfoFn = Arc<dyn Fn([f64; 2]) -> Result<Matrix2> + Send + Sync>;

#[derive(Clone)]
pub enum Chart {
    /// Trinomial cell probabilities `(u, v, 1 − u − v)` embedded as `2√π` on the sphere of radius 2.
    SphereMultinomial,
    /// `N((u, v), I₂)`.
    FlatNormal,
    /// `N(μ, σ²)` in coordinates `(μ, σ)`.
    HyperbolicNormal,
    Custom { name: String, info: InfoFn },
}

impl fmt::Debug for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Chart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" | "sphere_multinomial" => Ok(Chart::SphereMultinomial),
            "flat" | "flat_normal" => Ok(Chart::FlatNormal),
            "hyperbolic" | "hyperbolic_normal" => Ok(Chart::HyperbolicNormal),
            other => Err(Error::InvalidArgument(format!("unknown chart '{other}' (sphere, flat, hyperbolic)"))),
        }
    }
}

impl Chart {
    pub fn builtins() -> [Chart; 3] {
        [Chart::SphereMultinomial, Chart::FlatNormal, Chart::HyperbolicNormal]
    }

    pub fn custom(name: impl Into<String>, info: impl Fn([f64; 2]) -> Result<Matrix2> + Send + Sync + 'static) -> Self {
        Chart::Custom { name: name.into(), info: Arc::new(info) }
    }

    pub fn name(&self) -> &str {
        match self {
            Chart::SphereMultinomial => "sphere",
            Chart::FlatNormal => "flat",
            Chart::HyperbolicNormal => "hyperbolic",
            Chart::Custom { name, .. } => name,
        }
    }

    pub fn in_domain(&self, at: [f64; 2]) -> bool {
        let [u, v] = at;
        match self {
            Chart::SphereMultinomial => u > 0.0 && v > 0.0 && u + v < 1.0,
            Chart::FlatNormal => u.is_finite() && v.is_finite(),
            Chart::HyperbolicNormal => u.is_finite() && v > 0.0 && v.is_finite(),
            Chart::Custom { .. } => u.is_finite() && v.is_finite(),
        }
    }

    /// Embedding `x(u, v) ∈ ℝ³` whose partials are the scores, when the chart has one.
    pub fn embedding(&self, at: [f64; 2]) -> Option<[f64; 3]> {
        match self {
            Chart::SphereMultinomial => {
                let [u, v] = at;
                let w = 1.0 - u - v;
                Some([2.0 * u.sqrt(), 2.0 * v.sqrt(), 2.0 * w.sqrt()])
            }
            _ => None,
        }
    }

    /// Analytic scores `(x_u, x_v)`.
    pub fn scores(&self, at: [f64; 2]) -> Result<Option<[[f64; 3]; 2]>> {
        self.check(at)?;
        Ok(match self {
            Chart::SphereMultinomial => {
                let [u, v] = at;
                let sw = (1.0 - u - v).sqrt();
                Some([[1.0 / u.sqrt(), 0.0, -1.0 / sw], [0.0, 1.0 / v.sqrt(), -1.0 / sw]])
            }
            _ => None,
        })
    }

    fn check(&self, at: [f64; 2]) -> Result<()> {
        if self.in_domain(at) {
            Ok(())
        } else {
            Err(Error::DegenerateChartPoint(at))
        }
    }
}

pub fn information_matrix(chart: &Chart, at: [f64; 2]) -> Result<Matrix2> {
    chart.check(at)?;
    let [u, v] = at;
    let m = match chart {
        Chart::SphereMultinomial => {
            let w = 1.0 - u - v;
            [[1.0 / u + 1.0 / w, 1.0 / w], [1.0 / w, 1.0 / v + 1.0 / w]]
        }
        Chart::FlatNormal => [[1.0, 0.0], [0.0, 1.0]],
        Chart::HyperbolicNormal => [[1.0 / (v * v), 0.0], [0.0, 2.0 / (v * v)]],
        Chart::Custom { info, .. } => info(at)?,
    };
    check_spd(m)?;
    Ok(m)
}

fn check_spd(m: Matrix2) -> Result<()> {
    let [[e, f], [f2, g]] = m;
    if (f - f2).abs() > 1e-12 * (1.0 + f.abs()) {
        return Err(Error::SingularMatrix("information matrix is not symmetric".into()));
    }
    let det = e * g - f * f;
    if !(e > 0.0 && det > 0.0 && det.is_finite()) {
        return Err(Error::SingularMatrix(format!("information matrix {m:?} is not positive definite")));
    }
    Ok(())
}

fn gram(scores: [[f64; 3]; 2]) -> Matrix2 {
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let [xu, xv] = scores;
    [[dot(xu, xu), dot(xu, xv)], [dot(xv, xu), dot(xv, xv)]]
}

/// Information matrix from central-difference scores of the embedding.
pub fn numerical_information(chart: &Chart, at: [f64; 2], step: f64) -> Result<Matrix2> {
    chart.check(at)?;
    let emb = |p: [f64; 2]| chart.embedding(p).ok_or_else(|| Error::InvalidArgument(format!("chart '{}' has no embedding", chart.name())));
    let mut scores = [[0.0; 3]; 2];
    for (a, s) in scores.iter_mut().enumerate() {
        let mut hi = at;
        let mut lo = at;
        hi[a] += step;
        lo[a] -= step;
        let (xh, xl) = (emb(hi)?, emb(lo)?);
        for k in 0..3 {
            s[k] = (xh[k] - xl[k]) / (2.0 * step);
        }
    }
    let m = gram(scores);
    check_spd(m)?;
    Ok(m)
}

/// A smooth function of the chart coordinates `(u, v)` with symbolic partials.
#[derive(Debug, Clone)]
pub struct CoordFunctional {
    pub f: Expr,
    fu: Expr,
    fv: Expr,
}

impl CoordFunctional {
    pub fn new(f: Expr) -> Result<Self> {
        if f.theta_dim() > 0 {
            return Err(Error::InvalidArgument(format!("coordinate functional '{f}' may only use u and v")));
        }
        let fu = f.derivative(Var::Coord(0));
        let fv = f.derivative(Var::Coord(1));
        Ok(Self { f, fu, fv })
    }

    pub fn parse(src: &str) -> Result<Self> {
        Self::new(Expr::parse(src)?)
    }

    pub fn value(&self, at: [f64; 2]) -> f64 {
        self.f.eval(at, &[])
    }

    pub fn partials(&self, at: [f64; 2]) -> [f64; 2] {
        [self.fu.eval(at, &[]), self.fv.eval(at, &[])]
    }
}

fn solve2(m: Matrix2, b: [f64; 2]) -> Result<[f64; 2]> {
    let [[e, f], [_, g]] = m;
    let det = e * g - f * f;
    if !(det.abs() > 0.0) {
        return Err(Error::SingularMatrix("information matrix".into()));
    }
    Ok([(g * b[0] - f * b[1]) / det, (e * b[1] - f * b[0]) / det])
}

/// Coefficients `(a, b)` of `∇f = a x_u + b x_v`.
pub fn coordinate_gradient(chart: &Chart, f: &CoordFunctional, at: [f64; 2]) -> Result<[f64; 2]> {
    solve2(information_matrix(chart, at)?, f.partials(at))
}

/// `⟨∇f, x_u⟩` and `⟨∇f, x_v⟩` recombined through the information matrix.
pub fn riesz_pairing(m: Matrix2, grad: [f64; 2]) -> [f64; 2] {
    [m[0][0] * grad[0] + m[0][1] * grad[1], m[1][0] * grad[0] + m[1][1] * grad[1]]
}

fn quad_form(m: Matrix2, a: [f64; 2], b: [f64; 2]) -> Result<f64> {
    let x = solve2(m, b)?;
    Ok(a[0] * x[0] + a[1] * x[1])
}

/// `∂_ν ψ = [ψ_u ψ_v] I⁻¹ [ν_u ν_v]ᵀ`.
pub fn surface_sensitivity(chart: &Chart, psi: &CoordFunctional, nu: &CoordFunctional, at: [f64; 2]) -> Result<f64> {
    quad_form(information_matrix(chart, at)?, psi.partials(at), nu.partials(at))
}

/// The same quantity with the information matrix built from numerically differentiated
/// embedding scores.
pub fn surface_sensitivity_numerical(
    chart: &Chart,
    psi: &CoordFunctional,
    nu: &CoordFunctional,
    at: [f64; 2],
    step: f64,
) -> Result<f64> {
    quad_form(numerical_information(chart, at, step)?, psi.partials(at), nu.partials(at))
}

#[derive(Debug, Clone, Serialize)]
pub struct SurfaceReport {
    pub chart: String,
    pub point: [f64; 2],
    pub psi: String,
    pub nu: String,
    pub information: Matrix2,
    pub grad_psi: [f64; 2],
    pub grad_nu: [f64; 2],
    pub dpsi_dnu: f64,
    /// `∂_ν ψ / |∇ν|²`.
    #[serde(rename = "S")]
    pub s: f64,
}

pub fn surface_report(chart: &Chart, psi_src: &str, nu_src: &str, at: [f64; 2]) -> Result<SurfaceReport> {
    let psi = CoordFunctional::parse(psi_src)?;
    let nu = CoordFunctional::parse(nu_src)?;
    let information = information_matrix(chart, at)?;
    let dpsi_dnu = surface_sensitivity(chart, &psi, &nu, at)?;
    let nn = surface_sensitivity(chart, &nu, &nu, at)?;
    Ok(SurfaceReport {
        chart: chart.name().to_string(),
        point: at,
        psi: psi_src.to_string(),
        nu: nu_src.to_string(),
        information,
        grad_psi: coordinate_gradient(chart, &psi, at)?,
        grad_nu: coordinate_gradient(chart, &nu, at)?,
        dpsi_dnu,
        s: if nn > 0.0 { dpsi_dnu / nn } else { f64::NAN },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_information_at_the_centre() {
        let m = information_matrix(&Chart::SphereMultinomial, [1.0 / 3.0, 1.0 / 3.0]).unwrap();
        for (a, b) in m.iter().flatten().zip([6.0, 3.0, 3.0, 6.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let scores = Chart::SphereMultinomial.scores([0.2, 0.5]).unwrap().unwrap();
        let g = gram(scores);
        let m = information_matrix(&Chart::SphereMultinomial, [0.2, 0.5]).unwrap();
        for (a, b) in g.iter().flatten().zip(m.iter().flatten()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn normal_charts() {
        assert_eq!(information_matrix(&Chart::FlatNormal, [3.0, -2.0]).unwrap(), [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(information_matrix(&Chart::HyperbolicNormal, [0.0, 1.0]).unwrap(), [[1.0, 0.0], [0.0, 2.0]]);
        assert!(information_matrix(&Chart::HyperbolicNormal, [0.0, 0.0]).is_err());
        assert!(matches!(
            information_matrix(&Chart::SphereMultinomial, [0.5, 0.5]),
            Err(Error::DegenerateChartPoint(_))
        ));
    }

    #[test]
    fn sphere_gradients_and_sensitivity() {
        let (u, v) = (0.2, 0.5);
        let fu = CoordFunctional::parse("u").unwrap();
        let fv = CoordFunctional::parse("v").unwrap();
        let c = Chart::SphereMultinomial;
        let gu = coordinate_gradient(&c, &fu, [u, v]).unwrap();
        assert!((gu[0] - u * (1.0 - u)).abs() < 1e-12 && (gu[1] + u * v).abs() < 1e-12);
        let gv = coordinate_gradient(&c, &fv, [u, v]).unwrap();
        assert!((gv[0] + u * v).abs() < 1e-12 && (gv[1] - v * (1.0 - v)).abs() < 1e-12);
        let s = surface_sensitivity(&c, &fu, &fv, [1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!((s + 1.0 / 9.0).abs() < 1e-12);
        let k = CoordFunctional::parse("3").unwrap();
        assert_eq!(coordinate_gradient(&c, &k, [u, v]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn flat_coordinates_are_orthogonal() {
        let s = surface_sensitivity(
            &Chart::FlatNormal,
            &CoordFunctional::parse("u").unwrap(),
            &CoordFunctional::parse("v").unwrap(),
            [0.3, 0.4],
        )
        .unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn report_fields() {
        let r = surface_report(&"sphere".parse().unwrap(), "u", "v", [0.33333, 0.33333]).unwrap();
        assert!((r.dpsi_dnu + 0.11111).abs() < 1e-5);
        assert!("torus".parse::<Chart>().is_err());
    }
}
