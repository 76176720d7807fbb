use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite integrand at node {0}")]
    NonFiniteIntegrand(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grids do not match")]
    GridMismatch,

    #[error("density is not normalized (raw integral {0})")]
    NotNormalized(f64),

    #[error("negative density value {value} at node {node}")]
    NegativeDensity { node: usize, value: f64 },

    #[error("probability level {0} outside (0, 1)")]
    InvalidLevel(f64),

    #[error("non-unique quantile at level {0}")]
    NonUniqueQuantile(f64),

    #[error("point {0:?} outside the grid domain")]
    OutOfDomain(Vec<f64>),

    #[error("axis {axis} not available on a {dim}-D grid")]
    InvalidAxis { axis: usize, dim: usize },

    #[error("operation needs a piecewise-smooth field without jumps: {0}")]
    NotSmooth(&'static str),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("empty sample")]
    EmptySample,

    #[error("tangent vectors are based at different densities")]
    BaseMismatch,

    #[error("no analytic influence function for functional '{0}'")]
    NoAnalyticInfluence(String),

    #[error("quantile influence unstable: density {density:e} at quantile {at}")]
    QuantileInfluenceUnstable { at: f64, density: f64 },

    #[error("invalid mollifier schedule: {0}")]
    InvalidSchedule(String),

    #[error("mollifier not converged: finest level change {finest:e} exceeds coarsest {coarsest:e}")]
    MollifierNotConverged { finest: f64, coarsest: f64 },

    #[error("step too large for multiplicative path: h = {h}, max admissible h = {h_max}")]
    StepTooLarge { h: f64, h_max: f64 },

    #[error("gmm solve failed: {0}")]
    GmmSolveFailed(String),

    #[error("non-unique minimizer: {a:?} and {b:?} (criterion gap {gap:e})")]
    NonUniqueMinimizer { a: Vec<f64>, b: Vec<f64>, gap: f64 },

    #[error("local identification failure (condition number {0:e})")]
    LocalIdentificationFailure(f64),

    #[error("tangent restriction undefined off the correctly specified model (|Pg| = {0:e})")]
    Misspecified(f64),

    #[error("model not over-identified (r = p = {0})")]
    NotOverIdentified(usize),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("degenerate chart point {0:?}")]
    DegenerateChartPoint([f64; 2]),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite influence value at sample point {index} ({point:?})")]
    NonFiniteInfluence { index: usize, point: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
