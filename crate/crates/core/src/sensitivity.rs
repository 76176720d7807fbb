//! Sensitivity and sufficiency measures, counterfactual densities along gradients, and
//! first-order checks of the counterfactual interpretation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::functional::{influence, Functional};
use crate::model_space::GridDensity;
use crate::tangent::{policy_gradient, PolicyMetric, TangentVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct SensitivityReport {
    pub dpsi_dnu: f64,
    /// `∂_ν ν`, equal to `|∇ν|²`; the alternative denominator of `S`.
    pub dnu_dnu: f64,
    pub S: f64,
    pub R: f64,
    pub grad_norm_psi: f64,
    pub grad_norm_nu: f64,
    pub Lambda: f64,
    pub Delta: f64,
    pub metric_kind: String,
}

impl SensitivityReport {
    /// Re-checks the algebraic relations between the fields.
    pub fn validate(&self) -> Result<()> {
        let gp2 = self.grad_norm_psi.powi(2);
        let gn2 = self.grad_norm_nu.powi(2);
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()));
        let checks = [
            (self.R >= -1e-12 && self.R <= 1.0 + 1e-8, "R outside [0, 1]"),
            (rel(self.R, self.dpsi_dnu.powi(2) / (gp2 * gn2)), "R inconsistent with gradient norms"),
            (rel(self.S * gn2, self.dpsi_dnu), "S inconsistent with the gradient norm of nu"),
            (rel(self.dnu_dnu, gn2), "d_nu nu differs from |grad nu|^2"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::InvalidArgument(format!("invalid sensitivity report: {what}")));
            }
        }
        Ok(())
    }

    pub const CSV_HEADER: [&'static str; 9] =
        ["metric_kind", "dpsi_dnu", "S", "R", "grad_norm_psi", "grad_norm_nu", "Lambda", "Delta", "dnu_dnu"];

    pub fn csv_row(&self) -> Vec<String> {
        let mut row = vec![self.metric_kind.clone()];
        for v in [
            self.dpsi_dnu,
            self.S,
            self.R,
            self.grad_norm_psi,
            self.grad_norm_nu,
            self.Lambda,
            self.Delta,
            self.dnu_dnu,
        ] {
            row.push(format!("{v:.12}"));
        }
        row
    }
}

/// Influence functions and gradients behind a report, kept for plotting and reuse.
#[derive(Debug, Clone)]
pub struct SensitivityParts {
    pub psi_influence: TangentVector,
    pub nu_influence: TangentVector,
    pub grad_psi: TangentVector,
    pub grad_nu: TangentVector,
    pub report: SensitivityReport,
}

pub fn sensitivity(psi: &Functional, nu: &Functional, p: &GridDensity, metric: &PolicyMetric) -> Result<SensitivityReport> {
    Ok(sensitivity_parts(psi, nu, p, metric)?.report)
}

pub fn sensitivity_parts(psi: &Functional, nu: &Functional, p: &GridDensity, metric: &PolicyMetric) -> Result<SensitivityParts> {
    let psi_inf = influence(psi, p)?;
    let nu_inf = influence(nu, p)?;
    sensitivity_from_influences(psi_inf, nu_inf, metric)
}

pub fn sensitivity_from_influences(
    psi_inf: TangentVector,
    nu_inf: TangentVector,
    metric: &PolicyMetric,
) -> Result<SensitivityParts> {
    let grad_psi = policy_gradient(&psi_inf, metric)?;
    let grad_nu = policy_gradient(&nu_inf, metric)?;
    // g(∇a, ∇b) = ⟨ã, A*b̃⟩_P
    let dpsi_dnu = psi_inf.dot_p(&grad_nu)?;
    let gn2 = nu_inf.dot_p(&grad_nu)?;
    let gp2 = psi_inf.dot_p(&grad_psi)?;
    if !(gn2 > 0.0) {
        return Err(Error::InvalidArgument("gradient of nu vanishes".into()));
    }
    let info_pn = psi_inf.dot_p(&nu_inf)?;
    let info_nn = nu_inf.norm2_p()?;
    let info_pp = psi_inf.norm2_p()?;
    let report = SensitivityReport {
        dpsi_dnu,
        dnu_dnu: gn2,
        S: dpsi_dnu / gn2,
        R: if gp2 > 0.0 { dpsi_dnu * dpsi_dnu / (gp2 * gn2) } else { 0.0 },
        grad_norm_psi: gp2.max(0.0).sqrt(),
        grad_norm_nu: gn2.sqrt(),
        Lambda: info_pn / info_nn,
        Delta: if info_pp > 0.0 { info_pn * info_pn / (info_pp * info_nn) } else { 0.0 },
        metric_kind: metric.label().to_string(),
    };
    Ok(SensitivityParts { psi_influence: psi_inf, nu_influence: nu_inf, grad_psi, grad_nu, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// `(1 + h v) dP`.
    #[default]
    Multiplicative,
    /// `c(h) exp(h v) dP`.
    ExponentialTilt,
}

/// Largest `h > 0` (and smallest `h < 0`) keeping `1 + h v ≥ 1e-6`.
pub fn admissible_range(direction: &Field) -> (f64, f64) {
    let lo = direction.min_value();
    let hi = -direction.scale(-1.0).min_value();
    let h_max = if lo < 0.0 { (1.0 - 1e-6) / -lo } else { f64::INFINITY };
    let h_min = if hi > 0.0 { -(1.0 - 1e-6) / hi } else { f64::NEG_INFINITY };
    (h_min, h_max)
}

pub fn counterfactual_density(p: &GridDensity, direction: &TangentVector, h: f64) -> Result<GridDensity> {
    counterfactual_density_with(p, direction, h, PathKind::Multiplicative)
}

pub fn counterfactual_density_with(p: &GridDensity, direction: &TangentVector, h: f64, path: PathKind) -> Result<GridDensity> {
    if h == 0.0 {
        return Ok(p.clone());
    }
    if !h.is_finite() {
        return Err(Error::InvalidArgument(format!("path parameter must be finite, got {h}")));
    }
    match path {
        PathKind::Multiplicative => {
            let (h_min, h_max) = admissible_range(direction.field());
            if h > h_max || h < h_min {
                let bound = if h > 0.0 { h_max } else { h_min };
                return Err(Error::StepTooLarge { h, h_max: bound });
            }
            let factor = direction.field().scale(h).add_scalar(1.0);
            GridDensity::new(p.field().mul(&factor)?)
        }
        PathKind::ExponentialTilt => {
            let factor = direction.field().scale(h).map_pointwise(f64::exp)?;
            GridDensity::from_shape(p.field().mul(&factor)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualOptions {
    /// Solve for the `h` that hits the target increment exactly instead of the
    /// first-order rule `h = Δ / |∇ν|²`.
    pub refine: bool,
    pub path: PathKind,
}

impl Default for CounterfactualOptions {
    fn default() -> Self {
        Self { refine: false, path: PathKind::Multiplicative }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterfactualReport {
    pub h: f64,
    pub h_first_order: f64,
    pub refined: bool,
    pub target_increment: f64,
    pub nu_before: f64,
    pub nu_after: f64,
    pub psi_before: f64,
    pub psi_after: f64,
    pub predicted_psi_after: f64,
    /// Declared bound `C h²` on the increment gap of the first-order rule.
    pub tolerance: f64,
    pub sensitivity: SensitivityReport,
    #[serde(skip)]
    pub counterfactual: GridDensity,
    #[serde(skip)]
    pub grad_nu: Option<TangentVector>,
}

impl CounterfactualReport {
    pub fn achieved_increment(&self) -> f64 {
        self.nu_after - self.nu_before
    }

    pub fn psi_change(&self) -> f64 {
        self.psi_after - self.psi_before
    }
}

const NEWTON_ITERS: usize = 5;
const NEWTON_TOL: f64 = 1e-8;

pub fn counterfactual_report(
    psi: &Functional,
    nu: &Functional,
    p: &GridDensity,
    metric: &PolicyMetric,
    target_increment: f64,
    options: CounterfactualOptions,
) -> Result<CounterfactualReport> {
    let parts = sensitivity_parts(psi, nu, p, metric)?;
    let report = parts.report.clone();
    let grad = parts.grad_nu;
    let nu_eval = nu.evaluator(p.grid())?;
    let psi_eval = psi.evaluator(p.grid())?;
    let nu0 = nu_eval.eval(p.field())?;
    let psi0 = psi_eval.eval(p.field())?;
    let gn2 = report.dnu_dnu;
    let h1 = target_increment / gn2;
    let nu_at = |h: f64| -> Result<f64> { nu_eval.eval(counterfactual_density_with(p, &grad, h, options.path)?.field()) };

    let tolerance = if h1 == 0.0 {
        0.0
    } else {
        let gap = |h: f64| -> Result<f64> { Ok((nu_at(h)? - nu0 - h * gn2).abs()) };
        let half = gap(0.5 * h1)?;
        let c = half / (0.25 * h1 * h1);
        // factor two absorbs the third-order term of the halving estimate
        2.0 * c * h1 * h1 + 1e-12
    };

    let mut h = h1;
    let mut refined = false;
    if options.refine && h1 != 0.0 {
        let (h_min, h_max) = match options.path {
            PathKind::Multiplicative => admissible_range(grad.field()),
            PathKind::ExponentialTilt => (f64::NEG_INFINITY, f64::INFINITY),
        };
        // secant iterations from the first-order point
        let (mut ha, mut fa) = (0.0, -target_increment);
        let (mut hb, mut fb) = (h1, nu_at(h1)? - nu0 - target_increment);
        for _ in 0..NEWTON_ITERS {
            if fb.abs() <= NEWTON_TOL {
                break;
            }
            let slope = (fb - fa) / (hb - ha);
            if !(slope.is_finite() && slope != 0.0) {
                break;
            }
            let next = (hb - fb / slope).clamp(0.999 * h_min.max(-1e300), 0.999 * h_max.min(1e300));
            ha = hb;
            fa = fb;
            hb = next;
            fb = nu_at(hb)? - nu0 - target_increment;
        }
        h = hb;
        refined = true;
    }

    let cf = counterfactual_density_with(p, &grad, h, options.path)?;
    Ok(CounterfactualReport {
        h,
        h_first_order: h1,
        refined,
        target_increment,
        nu_before: nu0,
        nu_after: nu_eval.eval(cf.field())?,
        psi_before: psi0,
        psi_after: psi_eval.eval(cf.field())?,
        predicted_psi_after: psi0 + report.S * target_increment,
        tolerance,
        sensitivity: report,
        counterfactual: cf,
        grad_nu: Some(grad),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstOrderRow {
    pub h: f64,
    pub nu_error: f64,
    pub psi_error: f64,
    /// `|ψ(P_h) − ψ(P) − S (ν(P_h) − ν(P))|`.
    pub consistency_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstOrderTable {
    pub rows: Vec<FirstOrderRow>,
    /// Log-log slopes; `None` when the errors sit at rounding level (an exactly linear path).
    pub nu_slope: Option<f64>,
    pub psi_slope: Option<f64>,
    pub consistency_slope: Option<f64>,
}

/// Errors below this are treated as exact.
pub const EXACT_FLOOR: f64 = 1e-13;

pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if ys.iter().any(|&y| !(y > EXACT_FLOOR)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.abs().ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

pub fn verify_first_order(
    psi: &Functional,
    nu: &Functional,
    p: &GridDensity,
    metric: &PolicyMetric,
    h_list: &[f64],
) -> Result<FirstOrderTable> {
    if h_list.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 step sizes, got {}", h_list.len())));
    }
    if h_list.iter().any(|&h| !(h > 0.0)) || h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("step sizes must be positive and decreasing".into()));
    }
    let parts = sensitivity_parts(psi, nu, p, metric)?;
    let r = &parts.report;
    let grad = &parts.grad_nu;
    let nu_eval = nu.evaluator(p.grid())?;
    let psi_eval = psi.evaluator(p.grid())?;
    let nu0 = nu_eval.eval(p.field())?;
    let psi0 = psi_eval.eval(p.field())?;
    let rows = h_list
        .par_iter()
        .map(|&h| -> Result<FirstOrderRow> {
            let cf = counterfactual_density(p, grad, h)?;
            let dnu = nu_eval.eval(cf.field())? - nu0;
            let dpsi = psi_eval.eval(cf.field())? - psi0;
            Ok(FirstOrderRow {
                h,
                nu_error: (dnu - h * r.dnu_dnu).abs(),
                psi_error: (dpsi - h * r.dpsi_dnu).abs(),
                consistency_error: (dpsi - r.S * dnu).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let col = |f: fn(&FirstOrderRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(FirstOrderTable {
        nu_slope: loglog_slope(&hs, &col(|r| r.nu_error)),
        psi_slope: loglog_slope(&hs, &col(|r| r.psi_error)),
        consistency_slope: loglog_slope(&hs, &col(|r| r.consistency_error)),
        rows,
    })
}
