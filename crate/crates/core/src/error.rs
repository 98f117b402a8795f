use thiserror::Error;

/// Every failure mode the toolkit reports.
///
/// Variants carry enough context to print a useful message; residual
/// reports that are merely "FAIL" are not errors and live in
/// [`crate::report`].
#[derive(Debug, Error)]
pub enum IsoflowError {
    #[error("invalid interval: [{lo}, {hi}] must satisfy lo < hi")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("point at radius {radius} lies outside the chart of radius {limit}")]
    OutOfChart { radius: f64, limit: f64 },

    #[error("value {value} outside admissible range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("metric is not positive definite at {location}: min eigenvalue {min_eigenvalue}")]
    NotPositiveDefinite {
        location: String,
        min_eigenvalue: f64,
    },

    #[error("stencil does not fit at node {node:?}")]
    Stencil { node: Vec<usize> },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("connection generator is not skew-symmetric (defect {defect})")]
    InvalidConnection { defect: f64 },

    #[error("invalid neck family: {0}")]
    InvalidFamily(String),

    #[error("densities carry different mass: {mass_f} vs {mass_g}")]
    UnbalancedMass { mass_f: f64, mass_g: f64 },

    #[error("density is not strictly positive (min {min})")]
    InvalidDensity { min: f64 },

    #[error("densities disagree on the boundary collar (max deviation {deviation})")]
    CollarMismatch { deviation: f64 },

    #[error("solver failure: {message} (residual {residual})")]
    SolverFailure { message: String, residual: f64 },

    #[error("cannot balance the neck: cross-section mass spread {spread} exceeds {tolerance}")]
    CannotBalance { spread: f64, tolerance: f64 },

    #[error("conformal factor does not vanish on the top collar (residual {residual})")]
    BalanceViolation { residual: f64 },

    #[error("conformal Laplacian identity violated: disagreement {disagreement} > {tolerance}")]
    LemmaCheck { disagreement: f64, tolerance: f64 },

    #[error("seam mismatch: max deviation {deviation} at {location}")]
    Seam { deviation: f64, location: String },

    #[error("geodesic did not reach the far focal collar: {0}")]
    GeodesicRouting(String),

    #[error("not Morse-Bott: {0}")]
    NotMorseBott(String),

    #[error("invalid curvature profile: {0}")]
    InvalidCurvatureProfile(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("orientation failure: jacobian determinant {det} at node {node}")]
    Orientation { det: f64, node: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for IsoflowError {
    fn from(e: serde_json::Error) -> Self {
        IsoflowError::Parse(e.to_string())
    }
}

impl From<csv::Error> for IsoflowError {
    fn from(e: csv::Error) -> Self {
        IsoflowError::Parse(e.to_string())
    }
}

impl IsoflowError {
    /// Process exit status: 2 parse, 3 I/O, 4 any configuration or stage
    /// failure. 0 and 1 are reserved for completed runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            IsoflowError::Parse(_) => 2,
            IsoflowError::Io(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, IsoflowError>;
