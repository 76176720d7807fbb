use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use sensan_core::expr::Expr;
use sensan_core::functional::{Functional, FunctionalSpec};
use sensan_core::gmm::{MomentSpecJson, WeightSpec};
use sensan_core::grid::Grid;
use sensan_core::model_space::io::read_density_csv;
use sensan_core::model_space::{kde_fit, GridDensity, Sample, DEFAULT_CLAMP};
use sensan_core::sensitivity::PathKind;
use sensan_core::tangent::PolicyMetric;

use crate::CliError;

/// Reads a JSON config; errors name the file and the offending key path.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        if key == "." {
            e.inner().to_string()
        } else {
            format!("key `{key}`: {}", e.inner())
        }
    })
}

/// Prefixes a library error raised while building `key` from the config.
pub fn at<T>(key: &str, r: sensan_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(format!("key `{key}`: {e}")))
}

fn unit_hi() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Uniform {
        #[serde(default)]
        lo: f64,
        #[serde(default = "unit_hi")]
        hi: f64,
        n: Option<usize>,
    },
    Beta {
        a: f64,
        b: f64,
        n: Option<usize>,
    },
    /// Normal law truncated to `[lo, hi]`, by default `mean ± 6 sd`.
    Normal {
        #[serde(default)]
        mean: f64,
        #[serde(default = "unit_hi")]
        sd: f64,
        lo: Option<f64>,
        hi: Option<f64>,
        n: Option<usize>,
    },
    /// Unnormalized density given as an expression in `x`.
    Shape {
        expr: String,
        #[serde(default)]
        lo: f64,
        #[serde(default = "unit_hi")]
        hi: f64,
        n: Option<usize>,
    },
    Categorical {
        probs: Vec<f64>,
    },
    /// Density table with columns `x[,y],density` on a uniform grid.
    Csv {
        path: PathBuf,
    },
    /// Kernel density estimate of a one-column sample file.
    Kde {
        path: PathBuf,
        lo: f64,
        hi: f64,
        n: Option<usize>,
        bandwidth: Option<f64>,
    },
}

const DEFAULT_NODES: usize = 401;
const DEFAULT_NORMAL_NODES: usize = 801;

impl DistributionSpec {
    pub fn build(&self, key: &str, grid_override: Option<usize>) -> Result<GridDensity, CliError> {
        let nodes = |n: &Option<usize>, d: usize| grid_override.or(*n).unwrap_or(d);
        let line = |lo: f64, hi: f64, n: usize| at(key, Grid::line(lo, hi, n).map(Arc::new));
        match self {
            DistributionSpec::Csv { path } => {
                if !path.exists() {
                    return Err(CliError::Config(format!("key `{key}.path`: file {} does not exist", path.display())));
                }
                at(key, read_density_csv(path))
            }
            DistributionSpec::Kde { path, lo, hi, n, bandwidth } => {
                if !path.exists() {
                    return Err(CliError::Config(format!("key `{key}.path`: file {} does not exist", path.display())));
                }
                let sample = at(key, Sample::read_csv(path, vec![(*lo, *hi)]))?;
                let grid = line(*lo, *hi, nodes(n, DEFAULT_NODES))?;
                let bw = bandwidth.map(|b| vec![b]);
                at(key, kde_fit(&sample, grid, bw.as_deref()))
            }
            DistributionSpec::Categorical { probs } => at(key, GridDensity::categorical(probs)),
            DistributionSpec::Uniform { lo, hi, n } => self.build_on(key, &line(*lo, *hi, nodes(n, DEFAULT_NODES))?),
            DistributionSpec::Beta { n, .. } => self.build_on(key, &line(0.0, 1.0, nodes(n, DEFAULT_NODES))?),
            DistributionSpec::Normal { mean, sd, lo, hi, n } => {
                let lo = lo.unwrap_or(mean - 6.0 * sd);
                let hi = hi.unwrap_or(mean + 6.0 * sd);
                self.build_on(key, &line(lo, hi, nodes(n, DEFAULT_NORMAL_NODES))?)
            }
            DistributionSpec::Shape { lo, hi, n, .. } => self.build_on(key, &line(*lo, *hi, nodes(n, DEFAULT_NODES))?),
        }
    }

    /// The same law discretized on an existing grid (used for policy densities).
    pub fn build_on(&self, key: &str, grid: &Arc<Grid>) -> Result<GridDensity, CliError> {
        match self {
            DistributionSpec::Uniform { .. } => at(key, GridDensity::uniform(grid.clone())),
            DistributionSpec::Beta { a, b, .. } => at(key, GridDensity::beta(grid.clone(), *a, *b)),
            DistributionSpec::Normal { mean, sd, .. } => at(key, GridDensity::normal(grid.clone(), *mean, *sd)),
            DistributionSpec::Shape { expr, .. } => {
                let e = at(&format!("{key}.expr"), Expr::parse(expr))?;
                if e.theta_dim() > 0 {
                    return Err(CliError::Config(format!("key `{key}.expr`: parameters are not allowed in a density")));
                }
                at(key, GridDensity::from_fn_shape(grid.clone(), |x| e.eval(x, &[])))
            }
            other => {
                let q = other.build(key, None)?;
                if **q.grid() != **grid {
                    return Err(CliError::Config(format!("key `{key}`: grid differs from the base distribution")));
                }
                Ok(q)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Information,
    Policy {
        q: DistributionSpec,
        clamp: Option<(f64, f64)>,
        label: Option<String>,
    },
}

impl MetricSpec {
    pub fn label(&self, i: usize) -> String {
        match self {
            MetricSpec::Information => "information".into(),
            MetricSpec::Policy { label: Some(l), .. } => l.clone(),
            MetricSpec::Policy { .. } => format!("policy{i}"),
        }
    }

    pub fn build(&self, key: &str, p: &GridDensity) -> Result<PolicyMetric, CliError> {
        match self {
            MetricSpec::Information => Ok(PolicyMetric::Information),
            MetricSpec::Policy { q, clamp, .. } => {
                let q = q.build_on(&format!("{key}.q"), p.grid())?;
                at(key, PolicyMetric::policy(p, &q, Some(clamp.unwrap_or(DEFAULT_CLAMP))))
            }
        }
    }
}

fn default_metrics() -> Vec<MetricSpec> {
    vec![MetricSpec::Information]
}

pub fn functional(key: &str, spec: &FunctionalSpec) -> Result<Functional, CliError> {
    at(key, spec.build())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    pub distribution: DistributionSpec,
    pub psi: FunctionalSpec,
    pub nu: FunctionalSpec,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub distribution: DistributionSpec,
    pub psi: FunctionalSpec,
    pub nu: FunctionalSpec,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricSpec>,
    pub target_increment: f64,
    #[serde(default)]
    pub refine: bool,
    #[serde(default)]
    pub path: PathKind,
    /// Step sizes for the first-order remainder check.
    #[serde(default)]
    pub verify_steps: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmConfig {
    pub distribution: DistributionSpec,
    pub moments: MomentSpecJson,
    #[serde(default = "optimal_weight")]
    pub weight: WeightSpec,
}

fn optimal_weight() -> WeightSpec {
    WeightSpec::Named("optimal".into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub chart: String,
    pub point: [f64; 2],
    pub psi: String,
    pub nu: String,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum McMode {
    Consistency,
    Joint,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    #[default]
    Known,
    Kde,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McFileConfig {
    pub mode: McMode,
    pub distribution: DistributionSpec,
    pub psi: FunctionalSpec,
    pub nu: FunctionalSpec,
    #[serde(default = "information")]
    pub metric: MetricSpec,
    #[serde(default)]
    pub ratio: RatioMode,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    pub n: Option<usize>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn information() -> MetricSpec {
    MetricSpec::Information
}
