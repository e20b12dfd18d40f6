use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("point {0:?} lies outside the grid")]
    OutOfDomain(Vec<f64>),
    #[error("hessian determinant {det:.3e} below floor {floor:.3e} at {point:?}")]
    SingularHessian { det: f64, floor: f64, point: Vec<f64> },
    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("domain has no boundary cells")]
    EmptyBoundary,
    #[error("potential is not zero on the boundary (max |u| = {0:.3e})")]
    NonzeroBoundary(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("fit needs at least {needed} usable points, got {got}")]
    FitDegenerate { needed: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SectionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("section at {center:?} with height {height} is not compactly contained")]
    NotCompactlyContained { center: Vec<f64>, height: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormalizationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error("section is degenerate: hull spans dimension {hull_dim} < {dim}")]
    DegenerateSection { hull_dim: usize, dim: usize },
    #[error("affine map is singular (det = {0:.3e})")]
    SingularMap(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlidingError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error("sliding domain is empty")]
    EmptyDomain,
    #[error("field value is not finite at {0:?}")]
    NonFiniteField(Vec<f64>),
    #[error("{boundary_count} contacts on the section boundary for opening a = {a}")]
    ContainmentFailure { a: f64, boundary_count: usize },
    #[error("claim {claim} violated by {amount:.3e}")]
    ClaimViolation { claim: String, amount: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("domain is not convex")]
    NonConvexDomain,
    #[error("solver supports dimension 2 only, got {0}")]
    UnsupportedDimension(usize),
    #[error("shifted potential is not positive on the annulus (min {0:.3e})")]
    DomainViolation(f64),
    #[error("degenerate normalization: u = {0:.3e} >= 1 inside the section")]
    Degenerate(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoveringError {
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("cell {cell} at {point:?} is not covered")]
    CoverFailure { cell: usize, point: Vec<f64> },
    #[error("hypothesis ({which}) violated: {detail}")]
    HypothesisViolation { which: String, detail: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing field `{0}`")]
    Missing(String),
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error(transparent)]
    Normalization(#[from] NormalizationError),
    #[error(transparent)]
    Sliding(#[from] SlidingError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Covering(#[from] CoveringError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("norm budget exceeded: {0}")]
    NormBudgetExceeded(String),
    #[error("height {h} exceeds admissible h0 = {h0}")]
    HeightBudgetExceeded { h: f64, h0: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialize(String),
}

impl HarnessError {
    pub fn context(self, context: impl Into<String>) -> Self {
        HarnessError::Context { context: context.into(), source: Box::new(self) }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Serialize(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Serialize(e.to_string())
    }
}
